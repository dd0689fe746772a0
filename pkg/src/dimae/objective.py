"""Cross-domain masked reconstruction objective.

Each sample is style-mixed, masked, encoded, and decoded by its *own*
domain's decoder; the regression target is the original (pre-augmentation)
image at masked positions only. The loss is a mean over
(batch x masked patches x pixels).
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ValidationError
from .fourier_aug import StyleMixConfig, cp_style_mix
from .patching import MaskPlan, patchify_batch, sample_mask
from .seeds import substream_seed

@dataclass
class ReconTarget:
    """Masked-position patches of the original images, plus routing info."""

    target_patches: torch.Tensor  # (B, Nm, patch_dim)
    plans: list  # one MaskPlan per sample
    domains: np.ndarray  # (B,) source domain ids


def make_target(images: torch.Tensor, plans: list, patch_size: int) -> ReconTarget:
    """Gather masked-position patches of the un-augmented images."""
    patches = patchify_batch(images, patch_size)
    masked = np.stack([p.masked_idx for p in plans])
    idx = torch.from_numpy(masked).to(images.device)
    b, nm = idx.shape
    gathered = patches.gather(
        1, idx.unsqueeze(-1).expand(b, nm, patches.shape[-1])
    )
    return ReconTarget(gathered, plans, np.zeros(b, dtype=np.int64))


def masked_mse(pred: torch.Tensor, target: ReconTarget) -> torch.Tensor:
    """Mean squared error over masked positions only.

    pred covers all patch positions (B, N, patch_dim); visible positions
    contribute nothing.
    """
    b, n, d = pred.shape
    if len(target.plans) != b:
        raise ValidationError("prediction batch does not match target plans")
    for p in target.plans:
        if p.num_patches != n:
            raise ValidationError("mask plan does not match prediction grid")
    masked = np.stack([p.masked_idx for p in target.plans])
    idx = torch.from_numpy(masked).to(pred.device)
    nm = idx.shape[1]
    if target.target_patches.shape != (b, nm, d):
        raise ValidationError(
            f"target shape {tuple(target.target_patches.shape)} != {(b, nm, d)}"
        )
    pred_masked = pred.gather(1, idx.unsqueeze(-1).expand(b, nm, d))
    return ((pred_masked - target.target_patches) ** 2).mean()


def augment_batch(
    images: np.ndarray,
    domains: np.ndarray,
    pools,
    cfg: StyleMixConfig,
    seed: int,
    sample_ids: np.ndarray | None = None,
) -> np.ndarray:
    """Style-mix every image against one aux image per other domain.

    `pools` maps domain id -> (n, C, H, W) array to draw aux images from.
    Deterministic in `seed`; randomness is keyed by each sample's id, so a
    reordered batch gets identically augmented samples.
    """
    out = np.empty_like(images)
    all_domains = sorted(pools.keys())
    if sample_ids is None:
        sample_ids = np.arange(len(images))
    for i, (img, dom) in enumerate(zip(images, domains)):
        rng = np.random.default_rng(substream_seed(seed, f"aug/{sample_ids[i]}"))
        aux = []
        for d in all_domains:
            if d == int(dom):
                continue
            pool = pools[d]
            aux.append(pool[int(rng.integers(len(pool)))])
        out[i] = cp_style_mix(img, aux, cfg, rng)
    return out


def batch_loss(
    model,
    images: np.ndarray,
    domains: np.ndarray,
    pools,
    aug_cfg: StyleMixConfig,
    p_visible: float,
    seed: int,
    sample_ids: np.ndarray | None = None,
) -> torch.Tensor:
    """Full pretext loss for one batch: augment, mask, encode, decode, regress.

    Routing is per sample: each image is decoded by its own domain's decoder
    and regressed against its own pre-augmentation pixels. Deterministic in
    `seed`; per-sample randomness is keyed by `sample_ids` (defaults to batch
    position), so reordering a batch does not change the loss.
    """
    if images.ndim != 4:
        raise ValidationError("expected batch (B, C, H, W)")
    b = images.shape[0]
    if domains.shape != (b,):
        raise ValidationError("every sample needs a domain tag")
    if sample_ids is None:
        sample_ids = np.arange(b)
    dtype = next(model.parameters()).dtype
    patch_size = model.enc_cfg.patch_size
    num_patches = model.enc_cfg.num_patches

    views = augment_batch(images, domains, pools, aug_cfg, seed, sample_ids)
    plans = [
        sample_mask(num_patches, p_visible, substream_seed(seed, f"mask/{sid}"))
        for sid in sample_ids
    ]

    x = torch.from_numpy(images).to(dtype)
    v = torch.from_numpy(views).to(dtype)
    patches = patchify_batch(v, patch_size)
    vis = torch.from_numpy(np.stack([p.visible_idx for p in plans]))
    nv = vis.shape[1]
    vis_patches = patches.gather(
        1, vis.unsqueeze(-1).expand(b, nv, patches.shape[-1])
    )
    z = model.encode(vis_patches, vis)

    # content-preserving modes regress against the clean original, which is
    # still the content of what the encoder saw. Content-mixing baselines
    # (mixup / cutmix) alter the content itself, so their faithful
    # masked-autoencoder target is the mixed image: inside a pasted or
    # blended region the original is not recoverable from the input.
    target_src = v if aug_cfg.mode in ("mixup", "cutmix") else x
    target = make_target(target_src, plans, patch_size)
    target.domains = domains.astype(np.int64)

    # decode per domain group; loss stays a uniform mean over the batch.
    # a single-decoder model routes every sample to decoder 0.
    route = np.zeros_like(domains) if model.n_domains == 1 else domains
    total = None
    count = 0
    for dom in sorted(set(int(d) for d in route)):
        sel = np.flatnonzero(route == dom)
        sub = ReconTarget(
            target.target_patches[sel],
            [plans[i] for i in sel],
            target.domains[sel],
        )
        pred = model.decode(z[sel], vis[sel], dom)
        err = masked_mse(pred, sub) * len(sel)
        total = err if total is None else total + err
        count += len(sel)
    return total / count
