"""Restoration metrics on [0, 1] images of shape (n, c, h, w) or (c, h, w).

SSIM uses an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2 and
only fully-inside windows; the SSIM map is averaged over pixels and channels.
SAM is the mean per-pixel angle (degrees) between channel vectors, skipping
pixels where either vector has norm below 1e-8.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _pair(a, b):
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, cap: float = PSNR_CAP) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return cap
    return min(cap, 10.0 * np.log10(1.0 / mse))


def mae(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def _gauss1d(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = ndimage.correlate1d(img, g, axis=-1, mode="reflect")
    out = ndimage.correlate1d(out, g, axis=-2, mode="reflect")
    return out[..., r:-r, r:-r]


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """SSIM map for 2-D arrays a, b (valid region only)."""
    g = _gauss1d()
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a ** 2
    sbb = _filter_valid(b * b, g) - mu_b ** 2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * sab + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (saa + sbb + SSIM_C2)
    return num / den


def ssim(a, b) -> float:
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    return float(np.mean(ssim_map(a, b)))


def sam(a, b, eps: float = 1e-8) -> float:
    a, b = _pair(a, b)
    if a.ndim == 3:
        a, b = a[None], b[None]
    dot = np.sum(a * b, axis=1)
    na = np.sqrt(np.sum(a * a, axis=1))
    nb = np.sqrt(np.sum(b * b, axis=1))
    ok = (na >= eps) & (nb >= eps)
    if not np.any(ok):
        return 0.0
    cos = np.clip(dot[ok] / (na[ok] * nb[ok]), -1.0, 1.0)
    return float(np.degrees(np.mean(np.arccos(cos))))


METRICS = {"psnr": psnr, "ssim": ssim, "mae": mae, "sam": sam}


@dataclass
class MetricsReport:
    psnr: float
    ssim: float
    mae: float
    sam: float
    per_image: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(restored, reference, cap: float = PSNR_CAP) -> MetricsReport:
    """Per-image metrics plus their means over the batch."""
    a, b = _pair(restored, reference)
    if a.ndim == 3:
        a, b = a[None], b[None]
    rows = [{"psnr": psnr(x, y, cap), "ssim": ssim(x, y), "mae": mae(x, y), "sam": sam(x, y)}
            for x, y in zip(a, b)]
    agg = {k: float(np.mean([r[k] for r in rows])) for k in METRICS}
    return MetricsReport(per_image=rows, **agg)
