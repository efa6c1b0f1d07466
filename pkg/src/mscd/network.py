"""Two-branch fully-convolutional model for optical/SAR comparison.

Each sensor gets its own projection stack (3x3 convs, Conv -> ReLU -> BN);
both branches feed one shared 1x1 prediction head whose K output channels
act as cluster scores. No pooling and stride 1 everywhere, so spatial
dimensions are preserved end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    BatchNorm2d,
    CheckpointError,
    Conv2d,
    ParamSet,
    ReLU,
    Rng,
    Tensor,
    he_init,
    load_checkpoint,
    save_checkpoint,
)


@dataclass(frozen=True)
class Architecture:
    """Network shape: projection depth, head depth, cluster count, width."""

    l1: int = 4
    l2: int = 1
    k: int = 4
    width: int = 64
    in_channels: int = 3
    shared_projections: bool = False

    def validate(self) -> None:
        if self.l1 < 1 or self.l2 < 1:
            raise ValueError("l1 and l2 must be >= 1")
        if self.k < 2:
            raise ValueError("need at least 2 cluster channels")
        if self.width < 1 or self.in_channels < 1:
            raise ValueError("width and in_channels must be >= 1")

    def to_meta(self) -> dict[str, str]:
        return {
            "l1": str(self.l1),
            "l2": str(self.l2),
            "k": str(self.k),
            "width": str(self.width),
            "in_channels": str(self.in_channels),
            "shared_projections": "1" if self.shared_projections else "0",
        }

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "Architecture":
        try:
            return cls(
                l1=int(meta["l1"]),
                l2=int(meta["l2"]),
                k=int(meta["k"]),
                width=int(meta["width"]),
                in_channels=int(meta["in_channels"]),
                shared_projections=meta["shared_projections"] == "1",
            )
        except KeyError as e:
            raise CheckpointError(f"checkpoint meta missing field {e}") from None


def _add_conv(params, name, shape, rng) -> Conv2d:
    kernel = he_init(shape, rng)
    bias = Tensor(np.zeros(shape[0], dtype=np.float32))
    params.add(f"{name}.kernel", kernel)
    params.add(f"{name}.bias", bias)
    return Conv2d(kernel, bias, padding="same")


def _add_bn(params, name, channels) -> BatchNorm2d:
    scale = Tensor(np.ones(channels, dtype=np.float32))
    shift = Tensor(np.zeros(channels, dtype=np.float32))
    params.add(f"{name}.scale", scale)
    params.add(f"{name}.shift", shift)
    return BatchNorm2d(scale, shift)


class SiameseCDModel:
    """Holds the two projection stacks, the shared head, and all parameters."""

    def __init__(self, arch: Architecture, f_opt, f_sar, head, params: ParamSet, bn_layers):
        self.arch = arch
        self.f_opt = f_opt
        self.f_sar = f_sar
        self.head = head
        self.params = params
        self._bn_layers = bn_layers  # (name, layer) pairs, for checkpoint state

    # -- forward / backward -------------------------------------------------

    def _run(self, layers, x, train, tape):
        if x.ndim != 4 or x.shape[1] != self.arch.in_channels:
            raise ValueError(
                f"expected (B, {self.arch.in_channels}, R, C) input, got {x.shape}"
            )
        for layer in layers + self.head:
            if tape is None:
                x = layer.forward(x, train=train)
            else:
                ctx: dict = {}
                x = layer.forward(x, train=train, ctx=ctx)
                tape.append((layer, ctx))
        return x

    def forward_opt(self, x: np.ndarray, train: bool = False, tape=None) -> np.ndarray:
        return self._run(self.f_opt, x, train, tape)

    def forward_sar(self, z: np.ndarray, train: bool = False, tape=None) -> np.ndarray:
        return self._run(self.f_sar, z, train, tape)

    def backward(self, tape, gout: np.ndarray) -> None:
        """Propagate an output gradient down a recorded tape.

        The input itself never needs a gradient, so the first layer skips it.
        """
        for idx in range(len(tape) - 1, -1, -1):
            layer, ctx = tape[idx]
            gout = layer.backward(gout, ctx, need_input_grad=idx > 0)

    def receptive_halo(self) -> int:
        """Pixels of context an output pixel sees beyond itself on each side."""
        halo = 0
        for layer in self.f_opt + self.head:
            if isinstance(layer, Conv2d):
                halo += layer.kernel.shape[2] // 2
        return halo

    # -- persistence ----------------------------------------------------------

    def state_entries(self) -> list[tuple[str, np.ndarray]]:
        entries = [(name, t.data) for name, t in self.params.items()]
        for name, bn in self._bn_layers:
            for key, arr in bn.state():
                entries.append((f"{name}.{key}", arr))
        return entries

    def save(self, path) -> None:
        save_checkpoint(path, self.arch.to_meta(), self.state_entries())

    @classmethod
    def load(cls, path) -> "SiameseCDModel":
        meta, entries = load_checkpoint(path)
        arch = Architecture.from_meta(meta)
        model = build_model(arch, Rng(0))
        for name, t in model.params.items():
            if name not in entries:
                raise CheckpointError(f"{path}: checkpoint missing parameter {name!r}")
            arr = entries.pop(name)
            if arr.shape != t.data.shape:
                raise CheckpointError(f"{path}: shape mismatch for {name!r}")
            t.data = arr
        for name, bn in model._bn_layers:
            try:
                bn.load_state(entries.pop(f"{name}.running_mean"),
                              entries.pop(f"{name}.running_var"))
            except KeyError as e:
                raise CheckpointError(f"{path}: checkpoint missing state {e}") from None
        if entries:
            raise CheckpointError(f"{path}: unexpected tensors {sorted(entries)}")
        return model


def _projection_stack(arch: Architecture, rng: Rng, prefix: str, params: ParamSet, bn_layers):
    layers = []
    c_in = arch.in_channels
    for i in range(1, arch.l1 + 1):
        conv = _add_conv(params, f"{prefix}.conv{i}", (arch.width, c_in, 3, 3), rng)
        bn = _add_bn(params, f"{prefix}.bn{i}", arch.width)
        bn_layers.append((f"{prefix}.bn{i}", bn))
        layers += [conv, ReLU(), bn]
        c_in = arch.width
    return layers


def _prediction_stack(arch: Architecture, rng: Rng, params: ParamSet, bn_layers):
    layers = []
    c_in = arch.width
    for i in range(1, arch.l2 + 1):
        last = i == arch.l2
        c_out = arch.k if last else arch.width
        conv = _add_conv(params, f"h.conv{i}", (c_out, c_in, 1, 1), rng)
        layers.append(conv)
        if not last:
            # Only the final prediction layer is bare; inner ones keep ReLU+BN.
            bn = _add_bn(params, f"h.bn{i}", c_out)
            bn_layers.append((f"h.bn{i}", bn))
            layers += [ReLU(), bn]
        c_in = c_out
    return layers


def build_model(arch: Architecture, rng: Rng) -> SiameseCDModel:
    """He-initialized model; deterministic for a given architecture and seed."""
    arch.validate()
    params = ParamSet()
    bn_layers: list = []
    f_opt = _projection_stack(arch, rng, "f_opt", params, bn_layers)
    if arch.shared_projections:
        f_sar = f_opt
    else:
        f_sar = _projection_stack(arch, rng, "f_sar", params, bn_layers)
    head = _prediction_stack(arch, rng, params, bn_layers)
    return SiameseCDModel(arch, f_opt, f_sar, head, params, bn_layers)
