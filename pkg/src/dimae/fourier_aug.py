"""Content-preserved style mixing in the Fourier domain.

An image's phase carries the object layout (content) while its amplitude
carries texture/appearance statistics (style). Mixing amplitudes between
domains while keeping the source phase re-renders the same content under
other domains' styles; the resulting style views are then blended in image
space (pixelwise or CutMix-style) into a single style-mixed view.

All functions are pure and take explicit numpy Generators; they are safe to
call from parallel workers.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

MODES = ("stylemix", "stylecut", "mixup", "cutmix", "styletransfer", "none")


@dataclass(frozen=True)
class FourierPlanes:
    """Per-channel amplitude and phase of a 2-D DFT, shape (C, H, W)."""

    amplitude: np.ndarray
    phase: np.ndarray

    @property
    def shape(self):
        return self.amplitude.shape


@dataclass(frozen=True)
class StyleMixConfig:
    mode: str = "stylemix"
    lambda_law: tuple = ("uniform", 0.0, 1.0)
    mu_law: tuple = ("uniform",)
    cut_beta: float = 1.0
    # max box area fraction for the CutMix baseline's sampled boxes
    baseline_cut_area: float = 1.0
    # one lambda per style view by default; set True to share a single draw
    share_lambda: bool = False
    # optional band-limited amplitude mixing: fraction of the centered
    # spectrum to mix; None mixes the full spectrum
    band_fraction: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown augmentation mode {self.mode!r}")
        if self.band_fraction is not None and not 0.0 < self.band_fraction <= 1.0:
            raise ValidationError("band_fraction must be in (0, 1]")
        if not 0.0 < self.baseline_cut_area <= 1.0:
            raise ValidationError("baseline_cut_area must be in (0, 1]")


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3:
        raise ValidationError(f"expected (C, H, W) image, got shape {img.shape}")
    _, h, w = img.shape
    if h < 2 or w < 2:
        raise ValidationError("image sides must be >= 2")
    if not np.isfinite(img).all():
        raise ValidationError("image contains non-finite values")
    return img


def fft_decompose(img: np.ndarray) -> FourierPlanes:
    """Per-channel 2-D DFT split into amplitude and phase."""
    img = _check_image(img)
    spectrum = np.fft.fft2(img.astype(np.float64), axes=(-2, -1))
    phase = np.angle(spectrum)
    # keep phase in (-pi, pi]
    phase = np.where(phase == -np.pi, np.pi, phase)
    return FourierPlanes(np.abs(spectrum), phase)


def fft_compose(planes: FourierPlanes) -> np.ndarray:
    """Invert (amplitude, phase) back to a real image.

    The imaginary residual is checked against the amplitude scale before it
    is discarded; Hermitian-symmetric planes (anything produced by mixing
    amplitudes of real images) pass trivially.
    """
    if planes.amplitude.shape != planes.phase.shape:
        raise ValidationError(
            f"amplitude shape {planes.amplitude.shape} != phase shape {planes.phase.shape}"
        )
    spectrum = planes.amplitude * np.exp(1j * planes.phase)
    img = np.fft.ifft2(spectrum, axes=(-2, -1))
    scale = max(planes.amplitude.max(initial=0.0), 1e-12)
    if np.abs(img.imag).max() > 1e-4 * scale:
        raise ValidationError("planes are not Hermitian-symmetric (non-real inverse)")
    return img.real


def _band_mask(h: int, w: int, fraction: float) -> np.ndarray:
    """Boolean mask selecting the low-frequency band, unshifted layout.

    Symmetric in +/- frequency so band-limited amplitude mixing keeps the
    spectrum Hermitian (real inverse).
    """
    fy = np.abs(np.fft.fftfreq(h))[:, None]
    fx = np.abs(np.fft.fftfreq(w))[None, :]
    half = fraction / 2.0
    return (fy <= half) & (fx <= half)


def style_view(
    x: np.ndarray,
    x_aux: np.ndarray,
    lam: float,
    band_fraction: float | None = None,
) -> np.ndarray:
    """Re-render x with its own phase and an amplitude blended toward x_aux.

    The mixed amplitude is lam * A(x_aux) + (1 - lam) * A(x), over the full
    spectrum by default or over a centered low-frequency band.
    """
    x = _check_image(x)
    x_aux = _check_image(x_aux)
    if x.shape != x_aux.shape:
        raise ValidationError(f"shape mismatch {x.shape} vs {x_aux.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lambda must be in [0, 1], got {lam}")
    planes = fft_decompose(x)
    planes_aux = fft_decompose(x_aux)
    mixed = lam * planes_aux.amplitude + (1.0 - lam) * planes.amplitude
    if band_fraction is not None:
        keep = _band_mask(x.shape[-2], x.shape[-1], band_fraction)
        mixed = np.where(keep, mixed, planes.amplitude)
    # bins with no source signal carry numerical-noise phase; zero it there
    # so the mixed spectrum stays Hermitian when aux amplitude is injected
    phase = np.where(planes.amplitude > 1e-6, planes.phase, 0.0)
    return fft_compose(FourierPlanes(mixed, phase))


def sample_cut_box(h: int, w: int, area_fraction: float, rng: np.random.Generator):
    """CutMix box: target area fraction, uniform center, clipped to bounds."""
    cut_h = int(round(h * np.sqrt(area_fraction)))
    cut_w = int(round(w * np.sqrt(area_fraction)))
    cy = int(rng.integers(0, h))
    cx = int(rng.integers(0, w))
    top = np.clip(cy - cut_h // 2, 0, h)
    bottom = np.clip(cy + (cut_h + 1) // 2, 0, h)
    left = np.clip(cx - cut_w // 2, 0, w)
    right = np.clip(cx + (cut_w + 1) // 2, 0, w)
    return int(top), int(bottom), int(left), int(right)


def _sample_lambda(law: tuple, rng: np.random.Generator) -> float:
    kind = law[0]
    if kind == "uniform":
        lo, hi = law[1], law[2]
        return float(rng.uniform(lo, hi))
    if kind == "beta":
        return float(rng.beta(law[1], law[2]))
    raise ValidationError(f"unknown lambda law {law!r}")


def _sample_mu(law: tuple, n_views: int, rng: np.random.Generator) -> np.ndarray:
    kind = law[0]
    if kind == "uniform":
        return np.full(n_views, 1.0 / n_views)
    if kind == "dirichlet":
        return rng.dirichlet(np.full(n_views, float(law[1])))
    raise ValidationError(f"unknown mu law {law!r}")


def cp_style_mix(
    x: np.ndarray,
    aux: list[np.ndarray],
    cfg: StyleMixConfig,
    rng: np.random.Generator,
    record: dict | None = None,
) -> np.ndarray:
    """Style-mixed view of x: one style view per other domain, then blended.

    `aux` holds exactly one image per domain other than x's own; the source
    domain participates only by exclusion (its mixing weight is zero).
    StyleMix blends the views pixelwise with weights mu; StyleCut composes
    them spatially with sampled CutMix boxes. The result is clamped to
    [0, 1]. Pass `record` to capture the sampled lambdas/mus/boxes.
    """
    x = _check_image(x)
    if cfg.mode == "none":
        return np.clip(x, 0.0, 1.0)
    if cfg.mode in ("mixup", "cutmix"):
        if len(aux) < 1:
            raise ValidationError("content-mix baselines need at least one aux image")
        pick = int(rng.integers(len(aux)))
        return content_mix_baseline(
            x, aux[pick], cfg.mode, rng, max_area=cfg.baseline_cut_area, record=record
        )
    if len(aux) < 1:
        raise ValidationError(
            "style mixing needs at least one other domain (N_d >= 2)"
        )

    if cfg.share_lambda:
        shared = _sample_lambda(cfg.lambda_law, rng)
        lams = [shared] * len(aux)
    else:
        lams = [_sample_lambda(cfg.lambda_law, rng) for _ in aux]
    views = [
        style_view(x, a, lam, band_fraction=cfg.band_fraction)
        for a, lam in zip(aux, lams)
    ]
    if record is not None:
        record["lambda"] = [float(l) for l in lams]

    if cfg.mode == "styletransfer":
        # single style view, no image-space mixing
        pick = int(rng.integers(len(views)))
        out = views[pick]
        if record is not None:
            record["view"] = pick
    elif cfg.mode == "stylemix":
        mu = _sample_mu(cfg.mu_law, len(views), rng)
        out = np.tensordot(mu, np.stack(views), axes=1)
        if record is not None:
            record["mu"] = [float(m) for m in mu]
    else:  # stylecut
        out = views[0].copy()
        boxes = []
        h, w = x.shape[-2:]
        for v in views[1:]:
            area = float(rng.beta(cfg.cut_beta, cfg.cut_beta))
            top, bottom, left, right = sample_cut_box(h, w, area, rng)
            out[:, top:bottom, left:right] = v[:, top:bottom, left:right]
            boxes.append([top, bottom, left, right])
        if record is not None:
            record["boxes"] = boxes
    return np.clip(out, 0.0, 1.0)


def content_mix_baseline(
    x: np.ndarray,
    x_aux: np.ndarray,
    mode: str,
    rng: np.random.Generator,
    weight: float | None = None,
    box: tuple | None = None,
    max_area: float = 1.0,
    record: dict | None = None,
) -> np.ndarray:
    """Plain Mixup / CutMix of raw images across domains (content is mixed)."""
    x = _check_image(x)
    x_aux = _check_image(x_aux)
    if x.shape != x_aux.shape:
        raise ValidationError(f"shape mismatch {x.shape} vs {x_aux.shape}")
    if mode == "mixup":
        w = float(rng.uniform()) if weight is None else float(weight)
        out = w * x + (1.0 - w) * x_aux
        if record is not None:
            record["weight"] = w
    elif mode == "cutmix":
        if box is None:
            area = max_area * float(rng.beta(1.0, 1.0))
            box = sample_cut_box(x.shape[-2], x.shape[-1], area, rng)
        top, bottom, left, right = box
        out = x.copy()
        out[:, top:bottom, left:right] = x_aux[:, top:bottom, left:right]
        if record is not None:
            record["box"] = [int(b) for b in box]
    else:
        raise ValidationError(f"unknown content-mix mode {mode!r}")
    return np.clip(out, 0.0, 1.0)
