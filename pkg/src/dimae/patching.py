"""Image <-> patch-sequence conversion and visible/masked partition sampling.

Masking uses MAE-style fixed-count sampling (shuffle and split) so batch
tensors stay rectangular; each plan records the seed it was drawn from.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class MaskPlan:
    num_patches: int
    visible_idx: np.ndarray
    masked_idx: np.ndarray
    seed: int

    def __post_init__(self):
        vis, msk = set(self.visible_idx.tolist()), set(self.masked_idx.tolist())
        if vis & msk or vis | msk != set(range(self.num_patches)):
            raise ValidationError("visible/masked sets must partition the patch grid")

    @property
    def num_visible(self) -> int:
        return len(self.visible_idx)


@dataclass(frozen=True)
class PatchSequence:
    """(num_selected, C*P*P) patch rows plus the grid geometry."""

    patches: np.ndarray
    patch_size: int
    grid: tuple  # (grid_h, grid_w)
    channels: int


def _check_divisible(h: int, w: int, p: int):
    if p < 1 or h % p or w % p:
        raise ValidationError(f"image {h}x{w} not divisible by patch size {p}")


def patchify(img: np.ndarray, patch_size: int) -> PatchSequence:
    """Split (C, H, W) into row-major (N, C*P*P) patch rows; lossless."""
    img = np.asarray(img)
    c, h, w = img.shape
    _check_divisible(h, w, patch_size)
    gh, gw = h // patch_size, w // patch_size
    x = img.reshape(c, gh, patch_size, gw, patch_size)
    x = x.transpose(1, 3, 0, 2, 4).reshape(gh * gw, c * patch_size * patch_size)
    return PatchSequence(x, patch_size, (gh, gw), c)


def unpatchify(
    seq: PatchSequence,
    idx: np.ndarray | None = None,
    fill: float = 0.5,
) -> np.ndarray:
    """Scatter patch rows back into an image.

    With `idx`, only those grid positions are filled and the rest take the
    sentinel `fill` value; otherwise the sequence must cover the full grid.
    """
    gh, gw = seq.grid
    p, c = seq.patch_size, seq.channels
    n = gh * gw
    if idx is None:
        idx = np.arange(n)
    idx = np.asarray(idx)
    if len(idx) != len(seq.patches):
        raise ValidationError(
            f"{len(seq.patches)} patches for {len(idx)} grid positions"
        )
    flat = np.full((n, c * p * p), fill, dtype=seq.patches.dtype)
    flat[idx] = seq.patches
    img = flat.reshape(gh, gw, c, p, p).transpose(2, 0, 3, 1, 4)
    return img.reshape(c, gh * p, gw * p)


def sample_mask(num_patches: int, p_visible: float, seed: int) -> MaskPlan:
    """Uniform fixed-count visible subset: round(p_visible * num_patches) kept."""
    if not 0.0 < p_visible < 1.0:
        raise ValidationError(f"p_visible must be in (0, 1), got {p_visible}")
    n_vis = int(round(p_visible * num_patches))
    if n_vis < 1 or n_vis >= num_patches:
        raise ValidationError(
            f"visible count {n_vis} of {num_patches} leaves nothing to mask or encode"
        )
    perm = np.random.default_rng(seed).permutation(num_patches)
    return MaskPlan(
        num_patches=num_patches,
        visible_idx=np.sort(perm[:n_vis]),
        masked_idx=np.sort(perm[n_vis:]),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# batched torch variants used by the model/objective


def patchify_batch(images, patch_size: int):
    """(B, C, H, W) tensor -> (B, N, C*P*P), same layout as `patchify`."""
    b, c, h, w = images.shape
    _check_divisible(h, w, patch_size)
    gh, gw = h // patch_size, w // patch_size
    x = images.reshape(b, c, gh, patch_size, gw, patch_size)
    x = x.permute(0, 2, 4, 1, 3, 5)
    return x.reshape(b, gh * gw, c * patch_size * patch_size)


def unpatchify_batch(patches, patch_size: int, channels: int, grid: tuple):
    """(B, N, C*P*P) -> (B, C, H, W), inverse of `patchify_batch`."""
    b, n, _ = patches.shape
    gh, gw = grid
    x = patches.reshape(b, gh, gw, channels, patch_size, patch_size)
    x = x.permute(0, 3, 1, 4, 2, 5)
    return x.reshape(b, channels, gh * patch_size, gw * patch_size)
