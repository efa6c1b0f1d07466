"""Central finite-difference verification of every analytic gradient.

Each check builds a scalar probe loss L = sum(forward(x) * R) with a fixed
random projection R, computes the analytic gradient through the op's
backward, and compares against central differences of the forward alone.
Inputs are sampled away from ReLU/absolute-value kinks so the losses stay
smooth within the step size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import contrastive_loss, deep_cluster_loss, temporal_consistency_loss
from .tensor import BatchNorm2d, Conv2d, ReLU, Rng, Tensor

STEP = 1e-3
TOLERANCE = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    rel_error: float

    @property
    def passed(self) -> bool:
        return self.rel_error < TOLERANCE


def central_difference(f, x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Elementwise central differences of a scalar function of an array."""
    g = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f()
        flat[i] = orig - h
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Relative error between gradient vectors, as a norm ratio."""
    a = analytic.astype(np.float64).ravel()
    b = numeric.astype(np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def _away_from_zero(rng: Rng, shape, gap: float = 0.05) -> np.ndarray:
    """Values with |x| >= gap, both signs, float32."""
    mag = gap + np.abs(rng.normal(shape))
    sign = np.where(rng.uniform(0.0, 1.0, shape) < 0.5, -1.0, 1.0)
    return (mag * sign).astype(np.float32)


def _probe(rng: Rng, shape) -> np.ndarray:
    return rng.normal(shape).astype(np.float32)


def _check_conv(rng: Rng) -> dict[str, float]:
    b, ic, oc = 2, 3, 4
    h, w = 5, 6
    padding = "same" if rng.integers(0, 2) else "none"
    kh = kw = 1 if rng.integers(0, 4) == 0 else 3
    x = rng.normal((b, ic, h, w)).astype(np.float32)
    conv = Conv2d(Tensor(rng.normal((oc, ic, kh, kw)) * 0.5),
                  Tensor(rng.normal(oc) * 0.1), padding)
    probe_shape = conv.forward(x).shape
    probe = _probe(rng, probe_shape)

    def loss():
        return float((conv.forward(x).astype(np.float64) * probe).sum())

    ctx: dict = {}
    conv.forward(x, ctx=ctx)
    gin = conv.backward(probe, ctx)
    errs = {
        f"conv2d[{padding}]/input": rel_error(gin, central_difference(loss, x)),
        f"conv2d[{padding}]/kernel": rel_error(conv.kernel.grad, central_difference(loss, conv.kernel.data)),
        f"conv2d[{padding}]/bias": rel_error(conv.bias.grad, central_difference(loss, conv.bias.data)),
    }
    return errs


def _check_relu(rng: Rng) -> dict[str, float]:
    x = _away_from_zero(rng, (2, 3, 4, 4), gap=0.02)
    layer = ReLU()
    probe = _probe(rng, x.shape)

    def loss():
        return float((layer.forward(x).astype(np.float64) * probe).sum())

    ctx: dict = {}
    layer.forward(x, ctx=ctx)
    gin = layer.backward(probe, ctx)
    return {"relu/input": rel_error(gin, central_difference(loss, x))}


def _check_batchnorm(rng: Rng) -> dict[str, float]:
    b, c, h, w = 3, 4, 5, 5
    x = (rng.normal((b, c, h, w)) * 1.5 + 0.3).astype(np.float32)
    bn = BatchNorm2d(Tensor(1.0 + 0.2 * rng.normal(c)), Tensor(0.1 * rng.normal(c)))
    probe = _probe(rng, x.shape)

    def loss():
        return float((bn.forward(x, train=True).astype(np.float64) * probe).sum())

    ctx: dict = {}
    bn.forward(x, train=True, ctx=ctx)
    gin = bn.backward(probe, ctx)
    return {
        "batchnorm/input": rel_error(gin, central_difference(loss, x)),
        "batchnorm/scale": rel_error(bn.scale.grad, central_difference(loss, bn.scale.data)),
        "batchnorm/shift": rel_error(bn.shift.grad, central_difference(loss, bn.shift.data)),
    }


def _check_cluster_loss(rng: Rng) -> dict[str, float]:
    y = rng.normal((2, 4, 3, 3)).astype(np.float32)
    # Widen the top-1/top-2 gap so the argmax labels are stable under +-h.
    top = np.argmax(y, axis=1)
    np.put_along_axis(y, top[:, None], np.take_along_axis(y, top[:, None], 1) + 0.1, 1)

    def loss():
        return deep_cluster_loss(y)[0]

    _, _, grad = deep_cluster_loss(y)
    return {"deep_cluster_loss/y": rel_error(grad, central_difference(loss, y))}


def _check_temporal_loss(rng: Rng) -> dict[str, float]:
    y1 = rng.normal((2, 4, 3, 3)).astype(np.float32)
    y2 = y1 - _away_from_zero(rng, y1.shape)

    def loss():
        return temporal_consistency_loss(y1, y2)[0]

    _, g1, g2 = temporal_consistency_loss(y1, y2)
    return {
        "temporal_loss/y1": rel_error(g1, central_difference(loss, y1)),
        "temporal_loss/y2": rel_error(g2, central_difference(loss, y2)),
    }


def _check_contrastive_loss(rng: Rng) -> dict[str, float]:
    y1 = rng.normal((2, 4, 3, 3)).astype(np.float32)
    y2 = y1 - _away_from_zero(rng, y1.shape)

    def loss():
        return contrastive_loss(y1, y2)[0]

    _, g1, g2 = contrastive_loss(y1, y2)
    return {
        "contrastive_loss/y1": rel_error(g1, central_difference(loss, y1)),
        "contrastive_loss/y2": rel_error(g2, central_difference(loss, y2)),
    }


_CHECKS = (
    _check_conv,
    _check_relu,
    _check_batchnorm,
    _check_cluster_loss,
    _check_temporal_loss,
    _check_contrastive_loss,
)


def run_all(seed: int = 0, seeds_per_op: int = 20) -> list[CheckResult]:
    """Run every check `seeds_per_op` times; report the worst error per target."""
    worst: dict[str, float] = {}
    for check in _CHECKS:
        for k in range(seeds_per_op):
            rng = Rng(seed * 10007 + k)
            for name, err in check(rng).items():
                worst[name] = max(worst.get(name, 0.0), err)
    return [CheckResult(name, err) for name, err in sorted(worst.items())]
