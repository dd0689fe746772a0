"""Pretraining loop: AdamW with decoupled weight decay, warmup + cosine
schedule, JSON-lines metrics, and resumable checkpoints.

All randomness is derived from the config seed via named substreams keyed by
epoch / step / sample id, so a run resumed at an epoch boundary replays the
uninterrupted trajectory exactly.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import ImageDataset, stratified_batches
from .errors import TrainingDiverged, ValidationError
from .fourier_aug import StyleMixConfig
from .model import DiMAE, load_checkpoint, save_checkpoint
from .objective import batch_loss
from .seeds import substream, substream_seed


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1.5e-4
    weight_decay: float = 0.05
    epochs: int = 100
    warmup_epochs: float | None = None  # default: 5% of epochs
    batch_per_domain: int = 16
    p_visible: float = 0.25
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 = final only

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValidationError("base_lr must be positive")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")

    @property
    def warmup(self) -> float:
        return 0.05 * self.epochs if self.warmup_epochs is None else self.warmup_epochs


def lr_at(step: int, total_steps: int, cfg: TrainConfig, warmup_steps: int | None = None) -> float:
    """Linear warmup to base_lr, then half-cosine decay to zero."""
    if not 0 <= step < total_steps:
        raise ValidationError(f"step {step} outside [0, {total_steps})")
    if warmup_steps is None:
        warmup_steps = int(round(total_steps * cfg.warmup / cfg.epochs))
    if step < warmup_steps:
        return cfg.base_lr * step / warmup_steps
    t = (step - warmup_steps) / max(1, total_steps - warmup_steps)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


def decay_mask(model: DiMAE) -> dict:
    """Parameter name -> whether weight decay applies.

    Mask tokens, norm scales, and biases (everything 1-D) are exempt.
    """
    return {name: p.ndim >= 2 for name, p in model.named_parameters()}


def build_optimizer(model: DiMAE, cfg: TrainConfig) -> torch.optim.AdamW:
    mask = decay_mask(model)
    decay = [p for n, p in model.named_parameters() if mask[n]]
    no_decay = [p for n, p in model.named_parameters() if not mask[n]]
    return torch.optim.AdamW(
        [
            {"params": decay, "weight_decay": cfg.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=cfg.base_lr,
        betas=(0.9, 0.95),
    )


def pretrain(
    dataset: ImageDataset,
    model: DiMAE,
    cfg: TrainConfig,
    aug_cfg: StyleMixConfig,
    out_dir,
    resume_from=None,
    stop_after=None,
) -> list:
    """Run the pretraining loop; returns the per-epoch metrics records.

    Writes metrics.jsonl ({epoch, loss, lr} per line), periodic checkpoints,
    checkpoint_final.npz, and resume.pt (optimizer state) under out_dir.

    `stop_after` exits after that many epochs while keeping the full
    cfg.epochs learning-rate schedule, leaving a resumable state on disk —
    the same situation as a run interrupted partway through.
    """
    if dataset.registry.n_domains < 2:
        raise ValidationError("pretraining needs at least 2 domains (N_d >= 2)")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pools = dataset.pools()
    steps_per_epoch = min(
        int((dataset.domains == d).sum()) // cfg.batch_per_domain
        for d in range(dataset.registry.n_domains)
    )
    if steps_per_epoch == 0:
        raise ValidationError("batch_per_domain exceeds the smallest domain")
    total_steps = cfg.epochs * steps_per_epoch
    warmup_steps = int(round(total_steps * cfg.warmup / cfg.epochs))

    optimizer = build_optimizer(model, cfg)
    start_epoch = 0
    metrics = []
    mode = "w"
    if resume_from is not None:
        state = torch.load(Path(resume_from) / "resume.pt", weights_only=False)
        optimizer.load_state_dict(state["optimizer"])
        start_epoch = state["epoch"]
        metrics = state["metrics"]
        resumed = load_checkpoint(Path(resume_from) / "checkpoint_last.npz")
        model.load_state_dict(resumed.state_dict())
        mode = "a" if Path(resume_from) == out_dir else "w"

    metrics_path = out_dir / "metrics.jsonl"
    with open(metrics_path, mode) as log:
        if mode == "w":
            for rec in metrics:
                log.write(json.dumps(rec) + "\n")
        for epoch in range(start_epoch, cfg.epochs):
            data_rng = substream(cfg.seed, f"data/{epoch}")
            epoch_losses = []
            lr = 0.0
            for b, (images, domains, ids) in enumerate(
                stratified_batches(dataset, cfg.batch_per_domain, data_rng)
            ):
                step = epoch * steps_per_epoch + b
                lr = lr_at(step, total_steps, cfg, warmup_steps)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                loss = batch_loss(
                    model,
                    images,
                    domains,
                    pools,
                    aug_cfg,
                    cfg.p_visible,
                    seed=substream_seed(cfg.seed, f"step/{step}"),
                    sample_ids=ids,
                )
                if not torch.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} batch {b} (lr={lr:.3e})"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_losses.append(loss.item())
            rec = {"epoch": epoch, "loss": float(np.mean(epoch_losses)), "lr": lr}
            metrics.append(rec)
            log.write(json.dumps(rec) + "\n")
            log.flush()
            done = epoch + 1
            if cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
                _save_state(model, optimizer, done, metrics, out_dir)
            if stop_after is not None and done >= stop_after:
                _save_state(model, optimizer, done, metrics, out_dir)
                return metrics
    save_checkpoint(model, out_dir / "checkpoint_final.npz")
    _save_state(model, optimizer, cfg.epochs, metrics, out_dir)
    return metrics


def _save_state(model, optimizer, epoch, metrics, out_dir):
    save_checkpoint(model, Path(out_dir) / "checkpoint_last.npz")
    torch.save(
        {"optimizer": optimizer.state_dict(), "epoch": epoch, "metrics": list(metrics)},
        Path(out_dir) / "resume.pt",
    )
