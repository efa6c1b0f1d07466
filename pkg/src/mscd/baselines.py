"""Classical pixel-difference baselines sharing the detector's thresholding."""

from __future__ import annotations

import numpy as np

from .raster import Raster


def _check_pair(x1: Raster, z2: Raster) -> None:
    if x1.shape != z2.shape:
        raise ValueError(f"scene shapes differ: {x1.shape} vs {z2.shape}")


def cva(x1: Raster, z2: Raster) -> Raster:
    """Change vector analysis: per-pixel L2 norm over bands of (x1 - z2).

    Inputs are expected standardized, with SAR already replicated to match
    the optical band count.
    """
    _check_pair(x1, z2)
    d = x1.data.astype(np.float64) - z2.data.astype(np.float64)
    return Raster(np.sqrt((d * d).sum(axis=0))[np.newaxis].astype(np.float32))


def rcva(x1: Raster, z2: Raster, window: int = 3) -> Raster:
    """Registration-robust CVA: best match within a window, both directions.

    For each pixel p, d1 is the minimum spectral distance from x1[p] to any
    z2[q] with q in the window around p, d2 the same with roles swapped, and
    the output is max(d1, d2). Windows are clipped at the image border.
    """
    _check_pair(x1, z2)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    rows, cols = x1.rows, x1.cols
    a = x1.data.astype(np.float64)
    b = z2.data.astype(np.float64)
    r = window // 2
    d1 = np.full((rows, cols), np.inf)
    d2 = np.full((rows, cols), np.inf)
    for dr in range(-r, r + 1):
        for dc in range(-r, r + 1):
            rs, re = max(0, -dr), rows - max(0, dr)
            cs, ce = max(0, -dc), cols - max(0, dc)
            # distance from each pixel p to the neighbor at p + (dr, dc)
            diff = a[:, rs:re, cs:ce] - b[:, rs + dr : re + dr, cs + dc : ce + dc]
            dist = np.sqrt((diff * diff).sum(axis=0))
            np.minimum(d1[rs:re, cs:ce], dist, out=d1[rs:re, cs:ce])
            diff = a[:, rs + dr : re + dr, cs + dc : ce + dc] - b[:, rs:re, cs:ce]
            dist = np.sqrt((diff * diff).sum(axis=0))
            np.minimum(d2[rs:re, cs:ce], dist, out=d2[rs:re, cs:ce])
    return Raster(np.maximum(d1, d2)[np.newaxis].astype(np.float32))
