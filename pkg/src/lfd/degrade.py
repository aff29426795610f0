"""Simulated "predicted" location fields.

Rendered fields are degraded the way a regression network's output tends to
be: smooth, noisy, with a slightly wrong silhouette and missing thin parts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, DomainError
from .render import PREDICTED, RENDERED, LocationField


@dataclass
class DegradeConfig:
    blur_prob: float = 0.8
    blur_sigma: tuple = (0.5, 1.5)  # px
    noise_prob: float = 0.8
    noise_sigma: tuple = (0.005, 0.03)  # canonical units
    morph_prob: float = 0.5
    morph_radius: tuple = (1, 2)  # px; erosion or dilation chosen 50/50
    thin_prob: float = 0.5  # per thin component
    thin_width: int = 2  # components at most this wide count as thin

    def __post_init__(self):
        for name in ("blur_prob", "noise_prob", "morph_prob", "thin_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must be a probability, got {p}")
        for name in ("blur_sigma", "noise_sigma", "morph_radius"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ConfigurationError(f"bad range for {name}: {(lo, hi)}")
            setattr(self, name, tuple(getattr(self, name)))

    @classmethod
    def identity(cls) -> "DegradeConfig":
        return cls(0.0, (0.0, 0.0), 0.0, (0.0, 0.0), 0.0, (0, 0), 0.0)

    @property
    def max_dilation(self) -> int:
        return int(self.morph_radius[1]) if self.morph_prob > 0 else 0


def _square(r):
    return np.ones((2 * r + 1, 2 * r + 1), dtype=bool)


def erode(mask, r):
    return ndimage.binary_erosion(mask, _square(r), border_value=0) if r > 0 else mask.copy()


def dilate(mask, r):
    return ndimage.binary_dilation(mask, _square(r)) if r > 0 else mask.copy()


def thin_parts(mask, width=2):
    """Mask pixels not covered by an opening with a (width+1)^2 square."""
    if not mask.any():
        return np.zeros_like(mask)
    opened = ndimage.binary_opening(mask, np.ones((width + 1, width + 1), bool))
    return mask & ~opened


def _nearest_fill(coords, mask):
    """Copy each pixel's coords from its nearest masked pixel."""
    _, (iy, ix) = ndimage.distance_transform_edt(~mask, return_indices=True)
    return coords[iy, ix]


def degrade(lf: LocationField, cfg: DegradeConfig, seed: int) -> LocationField:
    if lf.domain != RENDERED:
        raise DomainError(f"degrade expects a rendered field, got {lf.domain!r}")
    rng = np.random.default_rng(seed)
    # fixed draw order keeps results seed-stable whichever steps fire
    u = rng.random(4)
    coords = lf.coords.astype(np.float64)
    mask = lf.mask.copy()

    if cfg.thin_prob > 0 and mask.any():
        thin = thin_parts(mask, cfg.thin_width)
        labels, n = ndimage.label(thin, structure=np.ones((3, 3), bool))
        drop = rng.random(n) < cfg.thin_prob
        if n and drop.any():
            mask &= ~np.isin(labels, np.flatnonzero(drop) + 1)

    if u[0] < cfg.morph_prob and mask.any():
        r = int(rng.integers(cfg.morph_radius[0], cfg.morph_radius[1] + 1))
        if rng.random() < 0.5:
            eroded = erode(mask, r)
            mask = eroded if eroded.any() else mask
        else:
            grown = dilate(mask, r)
            coords = np.where((grown & ~mask)[..., None], _nearest_fill(coords, mask), coords)
            mask = grown

    if u[1] < cfg.blur_prob and mask.any():
        sigma = rng.uniform(*cfg.blur_sigma)
        if sigma > 0:
            wgt = ndimage.gaussian_filter(mask.astype(np.float64), sigma, mode="constant")
            num = np.stack([ndimage.gaussian_filter(coords[..., c] * mask, sigma, mode="constant")
                            for c in range(3)], axis=-1)
            blurred = num / np.maximum(wgt, 1e-12)[..., None]
            coords = np.where(mask[..., None], blurred, coords)

    if u[2] < cfg.noise_prob and mask.any():
        sigma = rng.uniform(*cfg.noise_sigma)
        if sigma > 0:
            noise = rng.normal(0.0, sigma, size=coords.shape)
            coords = np.where(mask[..., None], coords + noise, coords)

    coords = np.clip(coords, -0.5, 0.5)
    coords[~mask] = 0.0
    out = lf.copy(domain=PREDICTED)
    out.coords = coords.astype(np.float32)
    out.mask = mask
    return out
