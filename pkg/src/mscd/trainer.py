"""Training loop: patch sampling, two-phase loss schedule, SGD updates.

Phase 1 trains both clustering heads jointly with (L1 + L2) / 2. Phase 2
cycles the optical clustering, temporal-consistency, and contrastive
losses over consecutive inner iterations. An epoch is one shuffled pass
over all patch anchors; each batch gets `iters_per_batch` inner iterations
and one fixed shuffle pairing.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .losses import (
    TAG_CLUSTER_OPT,
    TAG_CONTRASTIVE,
    TAG_JOINT,
    TAG_TEMPORAL,
    TAG_CLUSTER_SAR,
    contrastive_loss,
    deep_cluster_loss,
    shuffle_batch,
    temporal_consistency_loss,
)
from .network import SiameseCDModel
from .raster import Raster
from .tensor import Rng, sgd_momentum_step

log = logging.getLogger(__name__)

TAG_PHASE2_SUM = "phase2_sum"
PHASE2_CYCLE = (TAG_CLUSTER_OPT, TAG_TEMPORAL, TAG_CONTRASTIVE)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, iteration: int, tag: str, value: float):
        super().__init__(
            f"non-finite loss {value!r} at epoch {epoch}, iteration {iteration} ({tag})"
        )
        self.epoch = epoch
        self.iteration = iteration
        self.tag = tag


@dataclass
class TrainConfig:
    epochs: int = 5
    phase1_epochs: int = 1
    iters_per_batch: int = 50
    clusters: int = 4
    batch_size: int = 8
    patch_rows: int = 64
    patch_cols: int = 64
    stride: int = 32
    lr: float = 0.001
    momentum: float = 0.9
    seed: int = 0
    phase2_aggregate_sum: bool = False
    phase2_use_l2_mean: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.phase1_epochs <= self.epochs:
            raise ValueError("phase1_epochs must lie in [0, epochs]")
        for name in ("iters_per_batch", "batch_size", "patch_rows", "patch_cols", "stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.clusters < 2:
            raise ValueError("clusters must be >= 2")


@dataclass(frozen=True)
class TraceRow:
    epoch: int
    iteration: int
    tag: str
    value: float
    components: dict[str, float] = field(default_factory=dict)


def extract_patches(dims: tuple[int, int], patch: tuple[int, int], stride: int) -> list[tuple[int, int]]:
    """Top-left anchors on the stride grid; partial patches are dropped.

    The anchor list is shared positionally by both epochs of the scene.
    """
    rows, cols = dims
    pr, pc = patch
    if pr > rows or pc > cols:
        raise ValueError(f"patch {patch} larger than scene {dims}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return [(r, c) for r in range(0, rows - pr + 1, stride)
            for c in range(0, cols - pc + 1, stride)]


def training_step(model: SiameseCDModel, xb: np.ndarray, zb: np.ndarray,
                  zb_shuffled: np.ndarray, mode: str, cfg: TrainConfig):
    """One forward/loss/backward/update iteration.

    Returns (value, components, labels) where labels is the optical
    pseudo-label map when the mode computed one, else None.
    """
    components: dict[str, float] = {}
    labels = None
    if mode == TAG_JOINT or (mode == TAG_CLUSTER_OPT and cfg.phase2_use_l2_mean):
        tape1, tape2 = [], []
        y1 = model.forward_opt(xb, train=True, tape=tape1)
        y2 = model.forward_sar(zb, train=True, tape=tape2)
        l1, labels, g1 = deep_cluster_loss(y1)
        l2, _, g2 = deep_cluster_loss(y2)
        value = 0.5 * (l1 + l2)
        components = {TAG_CLUSTER_OPT: l1, TAG_CLUSTER_SAR: l2}
        model.backward(tape1, 0.5 * g1)
        model.backward(tape2, 0.5 * g2)
    elif mode == TAG_CLUSTER_OPT:
        tape1 = []
        y1 = model.forward_opt(xb, train=True, tape=tape1)
        value, labels, g1 = deep_cluster_loss(y1)
        model.backward(tape1, g1)
    elif mode == TAG_TEMPORAL:
        tape1, tape2 = [], []
        y1 = model.forward_opt(xb, train=True, tape=tape1)
        y2 = model.forward_sar(zb, train=True, tape=tape2)
        value, g1, g2 = temporal_consistency_loss(y1, y2)
        model.backward(tape1, g1)
        model.backward(tape2, g2)
    elif mode == TAG_CONTRASTIVE:
        tape1, tape2 = [], []
        y1 = model.forward_opt(xb, train=True, tape=tape1)
        y2s = model.forward_sar(zb_shuffled, train=True, tape=tape2)
        value, g1, g2 = contrastive_loss(y1, y2s)
        model.backward(tape1, g1)
        model.backward(tape2, g2)
    elif mode == TAG_PHASE2_SUM:
        tape1, tape2, tape3 = [], [], []
        y1 = model.forward_opt(xb, train=True, tape=tape1)
        y2 = model.forward_sar(zb, train=True, tape=tape2)
        y2s = model.forward_sar(zb_shuffled, train=True, tape=tape3)
        l1, labels, gc = deep_cluster_loss(y1)
        lt, gt1, gt2 = temporal_consistency_loss(y1, y2)
        lc, gc1, gc2 = contrastive_loss(y1, y2s)
        value = l1 + lt + lc
        components = {TAG_CLUSTER_OPT: l1, TAG_TEMPORAL: lt, TAG_CONTRASTIVE: lc}
        model.backward(tape1, gc + gt1 + gc1)
        model.backward(tape2, gt2)
        model.backward(tape3, gc2)
    else:
        raise ValueError(f"unknown training mode {mode!r}")
    sgd_momentum_step(model.params, cfg.lr, cfg.momentum)
    model.params.zero_grad()
    return float(value), components, labels


def _gather(scene: np.ndarray, anchors, pr: int, pc: int) -> np.ndarray:
    return np.stack([scene[:, r : r + pr, c : c + pc] for r, c in anchors])


def train(model: SiameseCDModel, x1: Raster, z2: Raster, cfg: TrainConfig,
          rng: Rng | None = None) -> tuple[SiameseCDModel, list[TraceRow]]:
    """Run the full two-phase schedule; returns the model and the loss trace.

    Inputs must be standardized, 3-band, equal-size scenes. The trace holds
    one row per iteration; phase-1 rows are tagged "joint" and carry both
    clustering components.
    """
    if x1.bands != 3 or z2.bands != 3:
        raise ValueError("training expects 3-band scenes (replicate SAR upstream)")
    if (x1.rows, x1.cols) != (z2.rows, z2.cols):
        raise ValueError(f"scene sizes differ: {x1.shape} vs {z2.shape}")
    if cfg.clusters != model.arch.k:
        raise ValueError(f"config clusters={cfg.clusters} but model outputs k={model.arch.k}")
    if rng is None:
        rng = Rng(cfg.seed)

    anchors = extract_patches((x1.rows, x1.cols), (cfg.patch_rows, cfg.patch_cols), cfg.stride)
    xs, zs = x1.data, z2.data
    trace: list[TraceRow] = []
    last_labels = None

    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_batch(len(anchors), rng)
        iteration = 0
        for start in range(0, len(anchors), cfg.batch_size):
            sel = [anchors[i] for i in order[start : start + cfg.batch_size]]
            xb = _gather(xs, sel, cfg.patch_rows, cfg.patch_cols)
            zb = _gather(zs, sel, cfg.patch_rows, cfg.patch_cols)
            perm = shuffle_batch(len(sel), rng)
            zb_shuffled = zb[perm]
            for j in range(1, cfg.iters_per_batch + 1):
                if epoch <= cfg.phase1_epochs:
                    mode = TAG_JOINT
                elif cfg.phase2_aggregate_sum:
                    mode = TAG_PHASE2_SUM
                else:
                    mode = PHASE2_CYCLE[(j - 1) % 3]
                value, components, labels = training_step(model, xb, zb, zb_shuffled, mode, cfg)
                iteration += 1
                if not math.isfinite(value):
                    raise TrainingDiverged(epoch, iteration, mode, value)
                if labels is not None:
                    last_labels = labels
                trace.append(TraceRow(epoch, iteration, mode, value, components))
        if last_labels is not None:
            hist = np.bincount(last_labels.ravel(), minlength=cfg.clusters)
            log.info("epoch %d cluster usage: %s", epoch, hist.tolist())
    return model, trace


def write_trace_csv(trace: list[TraceRow], path) -> None:
    """epoch, iteration, loss tag, value rows for plotting loss curves."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "iteration", "tag", "value"])
        for row in trace:
            w.writerow([row.epoch, row.iteration, row.tag, f"{row.value:.8g}"])


# ---------------------------------------------------------------------------
# Plain "key = value" config files.
# ---------------------------------------------------------------------------

_BOOL_WORDS = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}

# Keys that belong to the network architecture rather than TrainConfig.
ARCH_KEYS = {"l1": int, "l2": int, "width": int, "shared_projections": bool}


def parse_key_values(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ValueError(f"line {lineno}: empty key or value")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _convert(key: str, value: str, kind):
    try:
        if kind is bool:
            return _BOOL_WORDS[value.lower()]
        return kind(value)
    except (KeyError, ValueError):
        raise ValueError(f"config key {key!r}: cannot parse {value!r} as {kind.__name__}") from None


def config_from_mapping(kv: dict[str, str]) -> tuple[TrainConfig, dict]:
    """Split raw key/value strings into a TrainConfig and arch overrides.

    Unknown keys are an error so typos fail loudly.
    """
    train_fields = {f.name: f.type for f in fields(TrainConfig)}
    cfg_kwargs = {}
    arch_kwargs = {}
    for key, value in kv.items():
        if key in train_fields:
            kind = {"int": int, "float": float, "bool": bool}[train_fields[key]]
            cfg_kwargs[key] = _convert(key, value, kind)
        elif key in ARCH_KEYS:
            arch_kwargs[key] = _convert(key, value, ARCH_KEYS[key])
        else:
            raise ValueError(f"unknown config key {key!r}")
    return TrainConfig(**cfg_kwargs), arch_kwargs


def override_config(cfg: TrainConfig, **overrides) -> TrainConfig:
    """Apply non-None overrides (CLI flags win over file values)."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **changes) if changes else cfg
