"""Confusion-matrix metrics and false-color comparison maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import Raster

# FCC colors: correct detections black, false alarms green, misses pink,
# true negatives white (printable background).
FCC_TP = (0.0, 0.0, 0.0)
FCC_FP = (0.0, 1.0, 0.0)
FCC_FN = (1.0, 0.75, 0.8)
FCC_TN = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class EvalReport:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def sensitivity(self) -> float | None:
        """100 * TP / (TP + FN), or None when there are no reference changes."""
        pos = self.tp + self.fn
        return 100.0 * self.tp / pos if pos else None

    @property
    def specificity(self) -> float | None:
        """100 * TN / (TN + FP), or None when there are no reference non-changes."""
        neg = self.tn + self.fp
        return 100.0 * self.tn / neg if neg else None


def _as_binary(r: Raster, name: str) -> np.ndarray:
    if r.bands != 1:
        raise ValueError(f"{name} map must have 1 band, got {r.bands}")
    data = r.data[0]
    mask = data == 1.0
    if not np.logical_or(mask, data == 0.0).all():
        raise ValueError(f"{name} map is not binary (values outside {{0, 1}})")
    return mask


def evaluate(pred: Raster, ref: Raster) -> EvalReport:
    """Pixel confusion counts of a predicted change map against a reference."""
    if pred.shape != ref.shape:
        raise ValueError(f"map shapes differ: {pred.shape} vs {ref.shape}")
    p = _as_binary(pred, "predicted")
    r = _as_binary(ref, "reference")
    tp = int(np.count_nonzero(p & r))
    fp = int(np.count_nonzero(p & ~r))
    fn = int(np.count_nonzero(~p & r))
    tn = p.size - tp - fp - fn
    return EvalReport(tp=tp, tn=tn, fp=fp, fn=fn)


def fcc_map(pred: Raster, ref: Raster) -> Raster:
    """3-band comparison map; its color histogram equals the confusion counts."""
    if pred.shape != ref.shape:
        raise ValueError(f"map shapes differ: {pred.shape} vs {ref.shape}")
    p = _as_binary(pred, "predicted")
    r = _as_binary(ref, "reference")
    out = np.empty((3, pred.rows, pred.cols), dtype=np.float32)
    conds = [p & r, p & ~r, ~p & r]
    for band in range(3):
        choices = [FCC_TP[band], FCC_FP[band], FCC_FN[band]]
        out[band] = np.select(conds, choices, default=FCC_TN[band])
    return Raster(out)
