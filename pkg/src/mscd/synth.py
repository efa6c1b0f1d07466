"""Synthetic co-registered optical/SAR scene pairs with planted changes.

A Voronoi landcover map is rendered twice: once as a 3-band optical image
(per-class RGB means plus Gaussian noise) and once, after planting change
regions, as a 1-band SAR image (per-class backscatter times multiplicative
gamma speckle with mean 1). The two renderings of a class are numerically
unrelated, which is exactly what makes raw pixel differencing useless and
the learned comparison necessary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import shuffle_batch
from .raster import Raster
from .tensor import Rng

SITES_PER_CLASS = 6
OPTICAL_NOISE_STD = 0.05
MIN_PALETTE_GAP = 0.25


@dataclass(frozen=True)
class SynthSpec:
    rows: int
    cols: int
    n_classes: int = 4
    change_fraction: float = 0.05
    speckle_looks: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.rows < 16 or self.cols < 16:
            raise ValueError("scene must be at least 16x16")
        if self.n_classes < 2:
            raise ValueError("need at least 2 landcover classes")
        if not 0.0 < self.change_fraction < 0.5:
            raise ValueError("change_fraction must lie in (0, 0.5)")
        if self.speckle_looks < 1:
            raise ValueError("speckle_looks must be >= 1")


@dataclass(frozen=True)
class SceneDetails:
    """Generator internals, exposed for statistical self-audits."""

    class_pre: np.ndarray
    class_post: np.ndarray
    optical_palette: np.ndarray
    backscatter: np.ndarray


def _voronoi_classes(spec: SynthSpec, rng: Rng) -> np.ndarray:
    n_sites = SITES_PER_CLASS * spec.n_classes
    rr, cc = np.mgrid[0 : spec.rows, 0 : spec.cols]
    for _ in range(100):
        site_r = rng.integers(0, spec.rows, n_sites)
        site_c = rng.integers(0, spec.cols, n_sites)
        d2 = (rr[None] - site_r[:, None, None]) ** 2 + (cc[None] - site_c[:, None, None]) ** 2
        classes = (np.argmin(d2, axis=0) % spec.n_classes).astype(np.int64)
        if len(np.unique(classes)) == spec.n_classes:
            return classes
    raise RuntimeError("could not draw a landcover map covering every class")


def _optical_palette(n: int, rng: Rng) -> np.ndarray:
    for _ in range(1000):
        palette = rng.uniform(0.15, 0.85, (n, 3))
        gaps = np.linalg.norm(palette[:, None] - palette[None, :], axis=-1)
        gaps[np.diag_indices(n)] = np.inf
        if gaps.min() >= MIN_PALETTE_GAP:
            return palette
    raise RuntimeError("could not draw a separated optical palette")


def _backscatter_levels(n: int, rng: Rng) -> np.ndarray:
    # Evenly spaced so classes stay distinguishable under speckle; shuffled
    # so the ordering is unrelated to the optical palette.
    levels = np.linspace(0.15, 1.0, n)
    return levels[shuffle_batch(n, rng)]


def _disc_mask(rows, cols, cr, cc_, radius) -> tuple[slice, slice, np.ndarray]:
    r0, r1 = max(0, cr - radius), min(rows, cr + radius + 1)
    c0, c1 = max(0, cc_ - radius), min(cols, cc_ + radius + 1)
    rr, cc = np.mgrid[r0:r1, c0:c1]
    return slice(r0, r1), slice(c0, c1), (rr - cr) ** 2 + (cc - cc_) ** 2 <= radius**2


def _plant_changes(class_pre: np.ndarray, spec: SynthSpec, rng: Rng):
    rows, cols = class_pre.shape
    target = spec.change_fraction
    size_cap = max(5, int(min(rows, cols) * np.sqrt(0.2 * target)))
    for _ in range(200):
        class_post = class_pre.copy()
        changed = np.zeros((rows, cols), dtype=bool)
        for _ in range(10000):
            if changed.mean() >= 0.95 * target:
                break
            offset = int(rng.integers(1, spec.n_classes))
            if int(rng.integers(0, 2)):
                h = int(rng.integers(4, size_cap + 1))
                w = int(rng.integers(4, size_cap + 1))
                r0 = int(rng.integers(0, rows - h + 1))
                c0 = int(rng.integers(0, cols - w + 1))
                rsl, csl = slice(r0, r0 + h), slice(c0, c0 + w)
                mask = np.ones((h, w), dtype=bool)
            else:
                radius = int(rng.integers(3, max(4, size_cap // 2) + 1))
                rsl, csl, mask = _disc_mask(rows, cols, int(rng.integers(0, rows)),
                                            int(rng.integers(0, cols)), radius)
            region = class_post[rsl, csl]
            region[mask] = (class_pre[rsl, csl][mask] + offset) % spec.n_classes
            changed[rsl, csl] |= mask
        frac = changed.mean()
        if 0.8 * target <= frac <= 1.2 * target:
            return class_post, changed
    raise RuntimeError(f"could not plant changes near fraction {target}")


def generate_scene_with_details(spec: SynthSpec):
    rng = Rng(spec.seed)
    class_pre = _voronoi_classes(spec, rng)
    palette = _optical_palette(spec.n_classes, rng)
    backscatter = _backscatter_levels(spec.n_classes, rng)
    class_post, changed = _plant_changes(class_pre, spec, rng)

    optical = palette[class_pre].transpose(2, 0, 1)
    optical = optical + OPTICAL_NOISE_STD * rng.normal(optical.shape)
    looks = spec.speckle_looks
    speckle = rng.gamma(looks, 1.0 / looks, class_post.shape)
    sar = backscatter[class_post] * speckle

    x1 = Raster(optical)
    z2 = Raster(sar[np.newaxis])
    ref = Raster(changed.astype(np.float32)[np.newaxis])
    return x1, z2, ref, SceneDetails(class_pre, class_post, palette, backscatter)


def generate_scene(spec: SynthSpec) -> tuple[Raster, Raster, Raster]:
    """(optical 3-band, SAR 1-band, reference change map); deterministic per seed."""
    x1, z2, ref, _ = generate_scene_with_details(spec)
    return x1, z2, ref
