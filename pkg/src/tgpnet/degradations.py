"""Procedural paired data: clean textures and five synthetic degradations.

All images are float arrays of shape (n, c, h, w) in [0, 1]. Every generator
is a pure function of its inputs and an explicit seed.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from scipy import ndimage

__all__ = [
    "DegradationSpec", "PairedSample", "gen_clean", "apply_noise", "apply_blur",
    "apply_speckle", "apply_cloud", "apply_shadow", "apply_composite", "apply",
    "gaussian_kernel", "make_pair", "default_spec", "BENCHMARK_SIGMAS",
]

BENCHMARK_SIGMAS = (15, 25, 50)

_DEFAULTS: dict[str, dict[str, Any]] = {
    "denoise": {"sigma": 25.0},
    "deblur": {"kernel_size": 9, "sigma_b": 1.6},
    "despeckle": {"looks": 4.0},
    "decloud": {"opacity_scale": 0.6, "octaves": 4, "thickness": "thin"},
    "deshadow": {"attenuation": 0.6, "penumbra_sigma": 3.0, "vertices": 7},
}


@dataclass
class DegradationSpec:
    """One degradation (``task_id`` + ``params``) or an ordered composite.

    A composite has ``task_id == "composite"`` and its steps in ``compose``;
    steps are applied left to right.
    """

    task_id: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    compose: list["DegradationSpec"] = field(default_factory=list)

    def __post_init__(self):
        if self.task_id == "composite":
            self.compose = [s if isinstance(s, DegradationSpec) else DegradationSpec.from_dict(s)
                            for s in self.compose]
            return
        if self.task_id not in _DEFAULTS:
            raise ValueError(f"unknown degradation {self.task_id!r}; "
                             f"known: {sorted(_DEFAULTS)} or 'composite'")
        merged = dict(_DEFAULTS[self.task_id])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unknown {self.task_id} parameters: {sorted(unknown)}")
        merged.update(self.params)
        self.params = merged
        p = merged
        if self.task_id == "despeckle" and p["looks"] < 1:
            raise ValueError("speckle looks must be >= 1")
        if self.task_id == "deblur" and p["kernel_size"] % 2 == 0:
            raise ValueError("blur kernel_size must be odd")
        if self.task_id == "deshadow" and not 0 <= p["attenuation"] < 1:
            raise ValueError("shadow attenuation must be in [0, 1)")
        if self.task_id == "decloud":
            if p["thickness"] not in ("thin", "thick"):
                raise ValueError("cloud thickness must be 'thin' or 'thick'")
            if p["thickness"] == "thin" and p["opacity_scale"] > 0.6:
                raise ValueError("thin clouds need opacity_scale <= 0.6")

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.task_id != "composite":
            d.pop("compose")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationSpec":
        return cls(d["task_id"], dict(d.get("params", {})), int(d.get("seed", 0)),
                   list(d.get("compose", [])))


def default_spec(task_id: str, seed: int = 0, **params) -> DegradationSpec:
    return DegradationSpec(task_id, params, seed)


@dataclass
class PairedSample:
    clean: np.ndarray
    degraded: np.ndarray
    spec: DegradationSpec

    @property
    def task_id(self) -> str:
        return self.spec.task_id


# ---------------------------------------------------------------- textures

def _value_noise(rng: np.random.Generator, h: int, w: int, octaves: int,
                 base_cells: int = 3, persistence: float = 0.5) -> np.ndarray:
    """Sum of bilinearly upsampled random grids, normalized to [0, 1]."""
    total = np.zeros((h, w))
    amp, norm = 1.0, 0.0
    for o in range(octaves):
        cells = base_cells * 2 ** o
        grid = rng.random((cells + 1, cells + 1))
        ys = np.linspace(0, cells, h)
        xs = np.linspace(0, cells, w)
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        total += amp * ndimage.map_coordinates(grid, [yy, xx], order=1, mode="nearest")
        norm += amp
        amp *= persistence
    total /= norm
    lo, hi = total.min(), total.max()
    return (total - lo) / (hi - lo) if hi > lo else np.zeros_like(total)


def gen_clean(seed: int, h: int, w: int, c: int = 3, octaves: int = 4) -> np.ndarray:
    """Landscape-like texture (1, c, h, w): banded value noise with per-band colors."""
    if min(h, w) < 16:
        raise ValueError(f"clean images need h, w >= 16, got ({h}, {w})")
    rng = np.random.default_rng([int(seed), 0x7E57])
    elevation = _value_noise(rng, h, w, octaves)
    detail = _value_noise(rng, h, w, octaves + 1, base_cells=6)
    # piecewise-linear banding: water / field / land
    knots = np.sort(rng.uniform(0.25, 0.75, size=2))
    palette = rng.uniform(0.15, 0.85, size=(3, c))
    out = np.empty((c, h, w))
    for ch in range(c):
        band = np.interp(elevation, [0.0, knots[0], knots[1], 1.0],
                         [palette[0, ch] * 0.8, palette[0, ch], palette[1, ch], palette[2, ch]])
        out[ch] = band + 0.15 * (detail - 0.5)
    return np.clip(out, 0.0, 1.0)[None]


# ---------------------------------------------------------------- degradations

def apply_noise(x: np.ndarray, sigma: float, seed: int = 0) -> np.ndarray:
    """Additive Gaussian noise; ``sigma`` is on the 0-255 scale."""
    if sigma == 0:
        return x.copy()
    rng = np.random.default_rng([int(seed), 0x401])
    return np.clip(x + sigma / 255.0 * rng.standard_normal(x.shape), 0.0, 1.0)


def gaussian_kernel(k: int, sigma: float) -> np.ndarray:
    ax = np.arange(k) - (k - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    kern = np.outer(g, g)
    return kern / kern.sum()


def _depthwise_reflect(x: np.ndarray, kern: np.ndarray) -> np.ndarray:
    k = kern.shape[0]
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")
    h, w = x.shape[2:]
    out = np.zeros_like(x, dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out += kern[i, j] * xp[:, :, i:i + h, j:j + w]
    return out


def apply_blur(x: np.ndarray, kernel_size: int = 9, sigma_b: float = 1.6) -> np.ndarray:
    """Depthwise Gaussian blur with reflect padding."""
    return np.clip(_depthwise_reflect(x, gaussian_kernel(kernel_size, sigma_b)), 0.0, 1.0)


def speckle_field(shape, looks: float, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng([int(seed), 0x5BE])
    return rng.gamma(shape=looks, scale=1.0 / looks, size=shape)


def apply_speckle(x: np.ndarray, looks: float = 4.0, seed: int = 0) -> np.ndarray:
    """Multiplicative Gamma speckle with mean 1 and variance 1/looks."""
    return np.clip(x * speckle_field(x.shape, looks, seed), 0.0, 1.0)


def cloud_alpha(shape, opacity_scale: float, octaves: int = 4, thickness: str = "thin",
                seed: int = 0) -> np.ndarray:
    """Cloud opacity map (n, 1, h, w) in [0, 1]."""
    n, _, h, w = shape
    rng = np.random.default_rng([int(seed), 0xC10D])
    fields = np.stack([_value_noise(rng, h, w, octaves, base_cells=2) for _ in range(n)])[:, None]
    if opacity_scale == 0:
        return np.zeros_like(fields)
    if thickness == "thick":
        # field rescaled so its upper 15% saturates to 1: ground unrecoverable there
        q = np.quantile(fields, 0.85, axis=(1, 2, 3), keepdims=True)
        return np.clip(fields / np.where(q > 0, q, 1.0), 0.0, 1.0)
    return np.clip(opacity_scale * fields, 0.0, 1.0)


def apply_cloud(x: np.ndarray, opacity_scale: float = 0.6, octaves: int = 4,
                thickness: str = "thin", seed: int = 0) -> np.ndarray:
    """Blend toward white: (1 - alpha) * x + alpha."""
    alpha = cloud_alpha(x.shape, opacity_scale, octaves, thickness, seed)
    return np.clip((1.0 - alpha) * x + alpha, 0.0, 1.0)


def _polygon_mask(h: int, w: int, rng: np.random.Generator, vertices: int) -> np.ndarray:
    cy, cx = rng.uniform(0.3, 0.7) * h, rng.uniform(0.3, 0.7) * w
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=vertices))
    radii = rng.uniform(0.2, 0.45, size=vertices) * min(h, w)
    py, px = cy + radii * np.sin(angles), cx + radii * np.cos(angles)
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    inside = np.zeros((h, w), dtype=bool)
    # even-odd ray casting
    for i in range(vertices):
        y0, x0, y1, x1 = py[i - 1], px[i - 1], py[i], px[i]
        crosses = (y0 > yy) != (y1 > yy)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (yy - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (xx < xint)
    return inside.astype(np.float64)


def shadow_mask(shape, penumbra_sigma: float = 3.0, vertices: int = 7, seed: int = 0) -> np.ndarray:
    n, _, h, w = shape
    rng = np.random.default_rng([int(seed), 0x5AD])
    masks = []
    for _ in range(n):
        m = _polygon_mask(h, w, rng, vertices)
        if penumbra_sigma > 0:
            m = ndimage.gaussian_filter(m, penumbra_sigma, mode="nearest")
        masks.append(np.clip(m, 0.0, 1.0))
    return np.stack(masks)[:, None]


def apply_shadow(x: np.ndarray, attenuation: float = 0.6, penumbra_sigma: float = 3.0,
                 vertices: int = 7, seed: int = 0) -> np.ndarray:
    """Linear illumination model x * (1 - s * M) with a soft polygon mask M."""
    m = shadow_mask(x.shape, penumbra_sigma, vertices, seed)
    return np.clip(x * (1.0 - attenuation * m), 0.0, 1.0)


_APPLY = {
    "denoise": lambda x, p, s: apply_noise(x, p["sigma"], s),
    "deblur": lambda x, p, s: apply_blur(x, p["kernel_size"], p["sigma_b"]),
    "despeckle": lambda x, p, s: apply_speckle(x, p["looks"], s),
    "decloud": lambda x, p, s: apply_cloud(x, p["opacity_scale"], p["octaves"], p["thickness"], s),
    "deshadow": lambda x, p, s: apply_shadow(x, p["attenuation"], p["penumbra_sigma"],
                                             p["vertices"], s),
}


def apply(x: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    if spec.task_id == "composite":
        return apply_composite(x, spec.compose)
    return _APPLY[spec.task_id](x, spec.params, spec.seed)


def apply_composite(x: np.ndarray, specs) -> np.ndarray:
    """Apply degradations left to right; order defines the sequential inverse."""
    out = x.copy()
    for s in specs:
        out = apply(out, s)
    return out


def make_pair(seed: int, spec: DegradationSpec, h: int = 32, w: int = 32, c: int = 3) -> PairedSample:
    clean = gen_clean(seed, h, w, c)
    return PairedSample(clean, apply(clean, spec), spec)
