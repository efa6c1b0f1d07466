"""Self-supervised training objectives.

Three losses over (B, K, R', C') cluster-score maps:
  - deep clustering: softmax cross-entropy against per-pixel argmax
    pseudo-labels (labels are detached constants),
  - temporal consistency: mean per-pixel L1 distance between the two
    branches' outputs for spatially paired patches,
  - contrastive: mean of exp(-L1 distance) against a shuffled pairing,
    which only penalizes mispaired features that stay near-identical.

Each function returns the scalar loss together with the analytic gradients
for its inputs; callers feed those into the model's tape backward.
"""

from __future__ import annotations

import numpy as np

from .tensor import Rng

TAG_CLUSTER_OPT = "L1_cluster"
TAG_CLUSTER_SAR = "L2_cluster"
TAG_TEMPORAL = "L12_temporal"
TAG_CONTRASTIVE = "L12_contrastive"
TAG_JOINT = "joint"


def _check_pair(y1: np.ndarray, y2: np.ndarray) -> None:
    if y1.shape != y2.shape:
        raise ValueError(f"feature shapes differ: {y1.shape} vs {y2.shape}")
    if y1.ndim != 4:
        raise ValueError(f"expected (B, K, R, C) features, got {y1.shape}")


def deep_cluster_loss(y: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Cluster score map -> (loss, pseudo-labels, dloss/dy).

    Labels are the per-pixel argmax over the K channels (ties go to the
    lowest index); the loss is mean softmax cross-entropy against them.
    """
    if y.ndim != 4:
        raise ValueError(f"expected (B, K, R, C) features, got {y.shape}")
    if y.shape[1] < 2:
        raise ValueError("need at least 2 cluster channels")
    labels = np.argmax(y, axis=1)
    n = y.shape[0] * y.shape[2] * y.shape[3]
    shifted = y.astype(np.float64) - y.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    p_label = np.take_along_axis(p, labels[:, None], axis=1)
    loss = float(-np.log(p_label).mean())
    # d mean-CE / dy = (softmax - onehot(label)) / n
    np.put_along_axis(p, labels[:, None], p_label - 1.0, axis=1)
    p /= n
    return loss, labels, p.astype(np.float32)


def temporal_consistency_loss(y1: np.ndarray, y2: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean over pixels of the L1 channel distance between paired outputs."""
    _check_pair(y1, y2)
    d = y1.astype(np.float64) - y2
    n = y1.shape[0] * y1.shape[2] * y1.shape[3]
    loss = float(np.abs(d).sum() / n)
    g1 = (np.sign(d) / n).astype(np.float32)
    return loss, g1, -g1


def contrastive_loss(y1: np.ndarray, y2_shuffled: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean of exp(-L1 channel distance) for deliberately mispaired outputs.

    Always in (0, 1]; the penalty vanishes exponentially once features are
    already dissimilar, so only near-identical mispairs get pushed apart.
    """
    _check_pair(y1, y2_shuffled)
    d = y1.astype(np.float64) - y2_shuffled
    n = y1.shape[0] * y1.shape[2] * y1.shape[3]
    e = np.exp(-np.abs(d).sum(axis=1, keepdims=True))
    loss = float(e.sum() / n)
    g1 = (-(e / n) * np.sign(d)).astype(np.float32)
    return loss, g1, -g1


def shuffle_batch(n: int, rng: Rng) -> np.ndarray:
    """Uniform random permutation of 0..n-1 (Fisher-Yates; fixed points allowed)."""
    if n < 1:
        raise ValueError("need at least one element")
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return perm
