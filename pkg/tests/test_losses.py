import math

import numpy as np
import pytest

from mscd.losses import (
    contrastive_loss,
    deep_cluster_loss,
    shuffle_batch,
    temporal_consistency_loss,
)
from mscd.tensor import Rng


def pixel(values):
    """Single-pixel (1, K, 1, 1) feature map."""
    return np.array(values, dtype=np.float32).reshape(1, -1, 1, 1)


def softmax_ce_oracle(values, label):
    """Independent softmax cross-entropy in exact python floats."""
    exps = [math.exp(v) for v in values]
    return -math.log(exps[label] / sum(exps))


# -- deep clustering ----------------------------------------------------------


def test_cluster_loss_single_confident_pixel():
    y = pixel([2.0, 0.0, 0.0, 0.0])
    loss, labels, _ = deep_cluster_loss(y)
    assert labels[0, 0, 0] == 0
    # frozen from the oracle: -log(e^2 / (e^2 + 3)) for the 4-channel pixel
    want = softmax_ce_oracle([2.0, 0.0, 0.0, 0.0], 0)
    assert abs(want - 0.3407529539131312) < 1e-12
    assert abs(loss - want) < 1e-6


def test_cluster_loss_uniform_pixel_ties_to_first():
    loss, labels, _ = deep_cluster_loss(pixel([0.0, 0.0, 0.0, 0.0]))
    assert labels[0, 0, 0] == 0
    assert abs(loss - math.log(4.0)) < 1e-6


def test_cluster_loss_mean_over_pixels_and_batch():
    rng = np.random.default_rng(0)
    y = rng.standard_normal((2, 4, 3, 5)).astype(np.float32)
    loss, labels, _ = deep_cluster_loss(y)
    want = np.mean(
        [
            softmax_ce_oracle(y[b, :, r, c].tolist(), int(labels[b, r, c]))
            for b in range(2)
            for r in range(3)
            for c in range(5)
        ]
    )
    assert abs(loss - want) < 1e-6
    assert np.array_equal(labels, np.argmax(y, axis=1))


def test_cluster_loss_gradient_step_descends():
    y = pixel([0.5, 0.3, 0.1, -0.2])
    loss, _, grad = deep_cluster_loss(y)
    stepped = y - 0.1 * grad
    loss2, _, _ = deep_cluster_loss(stepped)
    assert loss2 < loss


def test_cluster_loss_nonnegative_on_random_inputs():
    rng = np.random.default_rng(1)
    for _ in range(20):
        y = (rng.standard_normal((1, 4, 4, 4)) * 5).astype(np.float32)
        loss, _, _ = deep_cluster_loss(y)
        assert loss >= 0.0


def test_cluster_loss_needs_two_channels():
    with pytest.raises(ValueError):
        deep_cluster_loss(np.zeros((1, 1, 2, 2), dtype=np.float32))


# -- temporal consistency -------------------------------------------------------


def test_temporal_loss_identity_is_zero():
    y = np.random.default_rng(2).standard_normal((2, 4, 3, 3)).astype(np.float32)
    loss, g1, g2 = temporal_consistency_loss(y, y.copy())
    assert loss == 0.0
    assert np.all(g1 == 0.0) and np.all(g2 == 0.0)


def test_temporal_loss_single_pixel_l1():
    y1 = pixel([1.0, -1.0, 0.5, 0.0])
    loss, _, _ = temporal_consistency_loss(y1, np.zeros_like(y1))
    assert abs(loss - 2.5) < 1e-7


def test_temporal_loss_symmetry_and_nonnegative():
    rng = np.random.default_rng(3)
    y1 = rng.standard_normal((2, 4, 5, 5)).astype(np.float32)
    y2 = rng.standard_normal((2, 4, 5, 5)).astype(np.float32)
    a, _, _ = temporal_consistency_loss(y1, y2)
    b, _, _ = temporal_consistency_loss(y2, y1)
    assert a == b
    assert a > 0.0


def test_temporal_loss_shape_mismatch():
    with pytest.raises(ValueError):
        temporal_consistency_loss(
            np.zeros((1, 4, 2, 2), np.float32), np.zeros((1, 4, 3, 2), np.float32)
        )


# -- contrastive ------------------------------------------------------------------


def test_contrastive_loss_identical_inputs_max_penalty():
    y = np.random.default_rng(4).standard_normal((2, 4, 3, 3)).astype(np.float32)
    loss, _, _ = contrastive_loss(y, y.copy())
    assert loss == 1.0


def test_contrastive_loss_ln2_distance():
    y1 = pixel([math.log(2.0), 0.0, 0.0, 0.0])
    loss, _, _ = contrastive_loss(y1, np.zeros_like(y1))
    assert abs(loss - 0.5) < 1e-7


def test_contrastive_loss_monotone_in_distance():
    rng = np.random.default_rng(5)
    y1 = rng.standard_normal((2, 4, 4, 4)).astype(np.float32)
    y2 = rng.standard_normal((2, 4, 4, 4)).astype(np.float32)
    prev = 1.0
    for scale in (0.25, 0.5, 1.0, 2.0, 4.0):
        loss, _, _ = contrastive_loss(y1, y1 - scale * (y1 - y2))
        assert loss <= prev
        prev = loss


def test_contrastive_loss_in_unit_interval():
    rng = np.random.default_rng(6)
    for _ in range(20):
        y1 = (rng.standard_normal((1, 4, 3, 3)) * 3).astype(np.float32)
        y2 = (rng.standard_normal((1, 4, 3, 3)) * 3).astype(np.float32)
        loss, _, _ = contrastive_loss(y1, y2)
        assert 0.0 < loss <= 1.0


# -- batch shuffling -----------------------------------------------------------------


def test_shuffle_single_element_is_identity():
    assert shuffle_batch(1, Rng(0)).tolist() == [0]


def test_shuffle_reproducible_per_seed():
    a = shuffle_batch(10, Rng(42))
    b = shuffle_batch(10, Rng(42))
    assert np.array_equal(a, b)
    assert sorted(a.tolist()) == list(range(10))


def test_shuffle_uniform_over_permutations():
    import itertools

    counts = {p: 0 for p in itertools.permutations(range(5))}
    rng = Rng(7)
    n = 10_000
    for _ in range(n):
        counts[tuple(shuffle_batch(5, rng).tolist())] += 1
    expect = n / 120.0
    sigma = math.sqrt(n * (1 / 120) * (1 - 1 / 120))
    for count in counts.values():
        assert abs(count - expect) < 5 * sigma


def test_shuffle_rejects_empty():
    with pytest.raises(ValueError):
        shuffle_batch(0, Rng(0))
