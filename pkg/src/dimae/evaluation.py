"""Evaluation protocols: linear probing on frozen features, the cross-domain
label-fraction protocol, the augmentation/decoder ablation grid, feature
export, and reconstruction visualization grids.
"""

import csv
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .data import ImageDataset
from .errors import ValidationError
from .fourier_aug import StyleMixConfig
from .model import DecoderConfig, EncoderConfig, load_checkpoint, build_model
from .patching import patchify_batch, sample_mask, unpatchify_batch
from .seeds import substream, substream_seed
from .train import TrainConfig, pretrain


def extract_features(model, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Frozen forward_features over a (n, C, H, W) array."""
    dtype = next(model.parameters()).dtype
    out = []
    model.eval()
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            x = torch.from_numpy(images[i : i + batch_size]).to(dtype)
            out.append(model.forward_features(x).cpu().numpy())
    return np.concatenate(out)


def linear_probe(
    train_features: np.ndarray,
    train_labels: np.ndarray,
    test_features: np.ndarray,
    test_labels: np.ndarray,
    steps: int = 500,
    lr: float = 0.1,
) -> float:
    """Top-1 accuracy of a multinomial logistic probe on frozen features.

    Full-batch gradient descent from zero init with a fixed budget;
    deterministic. Features are standardized with train-split statistics.
    """
    classes = np.unique(train_labels)
    missing = set(np.unique(test_labels)) - set(classes.tolist())
    if missing:
        raise ValidationError(f"classes {sorted(missing)} absent from train split")
    remap = {c: i for i, c in enumerate(classes.tolist())}
    y = np.asarray([remap[c] for c in train_labels])

    mean = train_features.mean(axis=0)
    std = train_features.std(axis=0) + 1e-8
    xtr = (train_features - mean) / std
    xte = (test_features - mean) / std

    n, d = xtr.shape
    k = len(classes)
    w = np.zeros((d, k))
    b = np.zeros(k)
    onehot = np.eye(k)[y]
    for _ in range(steps):
        logits = xtr @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        w -= lr * (xtr.T @ g)
        b -= lr * g.sum(axis=0)
    pred = classes[np.argmax(xte @ w + b, axis=1)]
    return float(np.mean(pred == test_labels))


def _stratified_fraction(labels: np.ndarray, fraction: float, rng) -> np.ndarray:
    """Class-stratified subset indices covering `fraction` of the samples."""
    keep = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        n = max(1, int(round(fraction * len(idx))))
        keep.append(rng.permutation(idx)[:n])
    return np.sort(np.concatenate(keep))


def finetune(
    model,
    images: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    epochs: int = 30,
    lr: float = 1e-3,
    batch_size: int = 64,
    seed: int = 0,
):
    """Fine-tune the whole encoder plus a fresh linear head; returns the head."""
    dtype = next(model.parameters()).dtype
    torch.manual_seed(substream_seed(seed, "finetune-head"))
    head = torch.nn.Linear(model.enc_cfg.feature_dim, num_classes).to(dtype)
    params = list(model.encoder.parameters()) + list(head.parameters())
    opt = torch.optim.AdamW(params, lr=lr, weight_decay=0.0)
    rng = substream(seed, "finetune-order")
    model.train()
    for _ in range(epochs):
        order = rng.permutation(len(images))
        for i in range(0, len(order), batch_size):
            take = order[i : i + batch_size]
            x = torch.from_numpy(images[take]).to(dtype)
            y = torch.from_numpy(labels[take])
            logits = head(model.forward_features(x))
            loss = torch.nn.functional.cross_entropy(logits, y)
            opt.zero_grad()
            loss.backward()
            opt.step()
    model.eval()
    return head


def _finetuned_accuracy(model, head, images, labels) -> float:
    dtype = next(model.parameters()).dtype
    preds = []
    with torch.no_grad():
        for i in range(0, len(images), 256):
            x = torch.from_numpy(images[i : i + 256]).to(dtype)
            preds.append(head(model.forward_features(x)).argmax(dim=1).numpy())
    return float(np.mean(np.concatenate(preds) == labels))


def cross_domain_protocol(
    checkpoint,
    labeled: ImageDataset,
    target: ImageDataset,
    label_fraction: float,
    seed: int = 0,
    finetune_epochs: int = 30,
) -> dict:
    """Label-fraction evaluation on domains unseen during pretraining.

    A class-stratified `label_fraction` of `labeled` (source-domain data) is
    used for adaptation: below 10% only a linear classifier is trained on
    frozen features; at or above 10% the whole encoder is fine-tuned.
    Reports per-target-domain accuracy, their arithmetic mean ("avg"), and
    the pooled accuracy over all test samples ("overall").
    """
    if not 0.0 < label_fraction <= 1.0:
        raise ValidationError("label_fraction must be in (0, 1]")
    model = checkpoint if hasattr(checkpoint, "encoder") else load_checkpoint(checkpoint)
    rng = substream(seed, "label-fraction")
    take = _stratified_fraction(labeled.labels, label_fraction, rng)
    sub = labeled.subset(np.isin(np.arange(len(labeled)), take))

    per_domain = {}
    counts = {}
    if label_fraction < 0.10:
        feats = extract_features(model, sub.images)
        for d in np.unique(target.domains):
            sel = target.domains == d
            acc = linear_probe(
                feats, sub.labels, extract_features(model, target.images[sel]),
                target.labels[sel],
            )
            per_domain[target.registry.names[d]] = acc
            counts[target.registry.names[d]] = int(sel.sum())
    else:
        num_classes = int(labeled.labels.max()) + 1
        head = finetune(
            model, sub.images, sub.labels, num_classes,
            epochs=finetune_epochs, seed=seed,
        )
        for d in np.unique(target.domains):
            sel = target.domains == d
            acc = _finetuned_accuracy(model, head, target.images[sel], target.labels[sel])
            per_domain[target.registry.names[d]] = acc
            counts[target.registry.names[d]] = int(sel.sum())

    total = sum(counts.values())
    overall = sum(per_domain[n] * counts[n] for n in per_domain) / total
    avg = float(np.mean(list(per_domain.values())))
    return {"per_domain": per_domain, "avg": avg, "overall": overall}


ABLATION_FIELDS = ("mode", "decoders", "depth", "seed", "accuracy")


def ablation_runner(
    source: ImageDataset,
    target: ImageDataset,
    cells: list,
    seeds: list,
    enc_cfg: EncoderConfig,
    dec_cfg: DecoderConfig,
    train_cfg: TrainConfig,
    work_dir,
    out_csv=None,
) -> list:
    """Pretrain and cross-domain-probe every (mode, decoders, depth) cell.

    `cells` holds (aug_mode, "multi"|"single", decoder_depth) triples; every
    cell runs once per seed with the shared seed set. Probes are trained on
    frozen source-domain features and scored on the held-out target domain.
    Returns per-run rows plus per-cell mean/std rows; optionally writes CSV.
    """
    work_dir = Path(work_dir)
    rows = []
    for mode, decoders, depth in cells:
        if decoders not in ("single", "multi"):
            raise ValidationError(f"unknown decoder variant {decoders!r}")
        for seed in seeds:
            n_dec = source.registry.n_domains if decoders == "multi" else 1
            cfg = replace(train_cfg, seed=seed)
            model = build_model(
                enc_cfg, replace(dec_cfg, depth=depth), n_dec, seed=seed
            )
            run_dir = work_dir / f"{mode}_{decoders}_d{depth}_s{seed}"
            pretrain(source, model, cfg, StyleMixConfig(mode=mode), run_dir)
            feats = extract_features(model, source.images)
            acc = linear_probe(
                feats, source.labels, extract_features(model, target.images),
                target.labels,
            )
            rows.append(
                {"mode": mode, "decoders": decoders, "depth": depth,
                 "seed": seed, "accuracy": acc}
            )
    summary = []
    for mode, decoders, depth in cells:
        accs = [
            r["accuracy"] for r in rows
            if (r["mode"], r["decoders"], r["depth"]) == (mode, decoders, depth)
        ]
        summary.append(
            {"mode": mode, "decoders": decoders, "depth": depth,
             "mean": float(np.mean(accs)), "std": float(np.std(accs))}
        )
    if out_csv is not None:
        with open(out_csv, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=ABLATION_FIELDS)
            writer.writeheader()
            writer.writerows(rows)
    return rows, summary


def export_features(checkpoint, dataset: ImageDataset, out_path=None) -> np.ndarray:
    """One row per image: feature vector, then domain id and class id."""
    model = checkpoint if hasattr(checkpoint, "encoder") else load_checkpoint(checkpoint)
    feats = extract_features(model, dataset.images)
    table = np.concatenate(
        [feats, dataset.domains[:, None], dataset.labels[:, None]], axis=1
    )
    if out_path is not None:
        header = [f"f{i}" for i in range(feats.shape[1])] + ["domain", "label"]
        np.savetxt(out_path, table, delimiter=",", header=",".join(header), comments="")
    return table


def reconstruction_grid(
    model,
    image: np.ndarray,
    p_visible: float,
    seed: int,
    decoders=None,
    mask_fill: float = 0.5,
) -> list:
    """[original, masked view, one reconstruction per requested decoder].

    Reconstructions paste predicted patches at masked positions into the
    visible context, the usual masked-autoencoder visualization.
    """
    dtype = next(model.parameters()).dtype
    p = model.enc_cfg.patch_size
    n = model.enc_cfg.num_patches
    plan = sample_mask(n, p_visible, seed)
    x = torch.from_numpy(image[None]).to(dtype)
    patches = patchify_batch(x, p)
    vis = torch.from_numpy(plan.visible_idx[None])
    vis_patches = patches.gather(
        1, vis.unsqueeze(-1).expand(1, plan.num_visible, patches.shape[-1])
    )
    masked_view = patches.clone()
    masked_view[0, plan.masked_idx] = mask_fill
    grid = model.enc_cfg.grid
    panels = [image, unpatchify_batch(masked_view, p, model.enc_cfg.channels, grid)[0].numpy()]
    if decoders is None:
        decoders = range(model.n_domains)
    model.eval()
    with torch.no_grad():
        z = model.encode(vis_patches, vis)
        for d in decoders:
            pred = model.decode(z, vis, d)
            merged = patches.clone()
            merged[0, plan.masked_idx] = pred[0, plan.masked_idx].clamp(0.0, 1.0)
            panels.append(unpatchify_batch(merged, p, model.enc_cfg.channels, grid)[0].numpy())
    return [np.asarray(p_, dtype=np.float32) for p_ in panels]
