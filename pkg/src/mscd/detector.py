"""Change detection from a trained model: magnitude image and thresholding.

The per-pixel change score is the L2 norm of the difference between the two
branches' K-channel feature vectors, computed fully convolutionally over the
whole scene in eval mode. Thresholding offers Otsu's between-class-variance
criterion and the ISODATA fixed-point iteration.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .network import SiameseCDModel
from .raster import Raster

TILE = 128


def _worker_count(n_jobs: int) -> int:
    try:
        cap = max(1, int(os.environ.get("MSCD_THREADS", "1")))
    except ValueError:
        cap = 1
    return min(cap, n_jobs)


def scene_features(model: SiameseCDModel, scene: Raster, branch: str) -> np.ndarray:
    """Eval-mode (K, R, C) feature map, tiled so memory stays bounded.

    Tiles overlap by the receptive-field halo, so stitched outputs equal the
    single-pass result; tiles are independent and may run on worker threads.
    """
    if branch not in ("opt", "sar"):
        raise ValueError(f"branch must be 'opt' or 'sar', got {branch!r}")
    if scene.bands != model.arch.in_channels:
        raise ValueError(f"scene has {scene.bands} bands, model expects {model.arch.in_channels}")
    forward = model.forward_opt if branch == "opt" else model.forward_sar
    halo = model.receptive_halo()
    rows, cols = scene.rows, scene.cols
    out = np.empty((model.arch.k, rows, cols), dtype=np.float32)

    jobs = []
    for r0 in range(0, rows, TILE):
        for c0 in range(0, cols, TILE):
            jobs.append((r0, min(r0 + TILE, rows), c0, min(c0 + TILE, cols)))

    def run(job):
        r0, r1, c0, c1 = job
        rs, cs = max(0, r0 - halo), max(0, c0 - halo)
        re, ce = min(rows, r1 + halo), min(cols, c1 + halo)
        y = forward(scene.data[np.newaxis, :, rs:re, cs:ce], train=False)
        out[:, r0:r1, c0:c1] = y[0, :, r0 - rs : r1 - rs, c0 - cs : c1 - cs]

    workers = _worker_count(len(jobs))
    if workers == 1:
        for job in jobs:
            run(job)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, jobs))
    return out


def feature_magnitude(model: SiameseCDModel, x1: Raster, z2: Raster) -> Raster:
    """Per-pixel L2 norm of the bi-temporal feature difference."""
    if (x1.rows, x1.cols) != (z2.rows, z2.cols):
        raise ValueError(f"scene sizes differ: {x1.shape} vs {z2.shape}")
    y1 = scene_features(model, x1, "opt")
    y2 = scene_features(model, z2, "sar")
    d = y1 - y2
    return Raster(np.sqrt((d * d).sum(axis=0))[np.newaxis])


def _magnitude_values(g) -> np.ndarray:
    if isinstance(g, Raster):
        if g.bands != 1:
            raise ValueError(f"magnitude image must have 1 band, got {g.bands}")
        return g.data.ravel()
    return np.asarray(g, dtype=np.float32).ravel()


def otsu_threshold(g, bins: int = 256) -> float:
    """Histogram threshold maximizing between-class variance.

    Candidates are the upper edges of the `bins` histogram bins over
    [min, max]; ties resolve to the lower threshold.
    """
    vals = _magnitude_values(g).astype(np.float64)
    lo, hi = float(vals.min()), float(vals.max())
    if lo == hi:
        raise ValueError("constant magnitude image: no threshold exists")
    hist, edges = np.histogram(vals, bins=bins, range=(lo, hi))
    w = hist.astype(np.float64)
    centers = 0.5 * (edges[:-1] + edges[1:])
    total = w.sum()
    csum = np.cumsum(w)
    cmass = np.cumsum(w * centers)
    w0 = csum / total
    w1 = 1.0 - w0
    with np.errstate(invalid="ignore", divide="ignore"):
        mu0 = cmass / csum
        mu1 = (cmass[-1] - cmass) / (total - csum)
        sigma_b = w0 * w1 * (mu0 - mu1) ** 2
    sigma_b[~np.isfinite(sigma_b)] = 0.0
    best = int(np.argmax(sigma_b))
    return float(edges[best + 1])


def isodata_threshold(g, tol: float = 1e-6, max_iter: int = 100) -> float:
    """Fixed point of t = (mean below t + mean above t) / 2, from the global mean."""
    vals = _magnitude_values(g).astype(np.float64)
    if float(vals.min()) == float(vals.max()):
        raise ValueError("constant magnitude image: no threshold exists")
    t = float(vals.mean())
    for _ in range(max_iter):
        below = vals <= t
        t_new = 0.5 * (float(vals[below].mean()) + float(vals[~below].mean()))
        if abs(t_new - t) < tol:
            return t_new
        t = t_new
    return t


def apply_threshold(g: Raster, t: float) -> Raster:
    """Binary change map: pixel is changed iff its magnitude strictly exceeds t."""
    if g.bands != 1:
        raise ValueError(f"magnitude image must have 1 band, got {g.bands}")
    return Raster((g.data > t).astype(np.float32))
