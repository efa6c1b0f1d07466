"""Dense float32 tensor engine with hand-written reverse-mode gradients.

Implements exactly the operator set the change-detection network needs:
2-D cross-correlation (via im2col + BLAS matmul), ReLU, batch norm, He
initialization, and SGD with momentum. All computation is float32 and,
with a single BLAS thread, bitwise deterministic for a given seed.
"""

from __future__ import annotations

import math

import numpy as np

CHECKPOINT_MAGIC = "MSCD1"


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


class Rng:
    """Seeded PCG64 stream; the same seed yields the same sequence on any platform."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size)

    def gamma(self, shape: float, scale: float, size=None) -> np.ndarray:
        return self._gen.gamma(shape, scale, size)


class Tensor:
    """Float32 array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.ascontiguousarray(data, dtype=np.float32)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def add_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"


class ParamSet:
    """Ordered, named trainable tensors plus matching momentum buffers.

    Insertion order is the canonical parameter order; it is stable across
    runs for a fixed architecture, which the determinism contract relies on.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.momentum: dict[str, np.ndarray] = {}

    def add(self, name: str, t: Tensor) -> None:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._params[name] = t
        self.momentum[name] = np.zeros_like(t.data)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def count(self) -> int:
        return sum(t.size for t in self._params.values())


def he_init(shape, rng: Rng, fan_in: int | None = None) -> Tensor:
    """Kernel initialization: normal(0, sqrt(2 / fan_in)).

    For OIHW kernel shapes fan_in defaults to in_channels * kh * kw.
    """
    shape = tuple(int(s) for s in shape)
    if fan_in is None:
        if len(shape) != 4:
            raise ValueError("fan_in must be given for non-OIHW shapes")
        fan_in = shape[1] * shape[2] * shape[3]
    std = math.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(shape) * std)


def sgd_momentum_step(params: ParamSet, lr: float, momentum: float) -> None:
    """v <- momentum*v + grad; w <- w - lr*v. Gradients are left untouched."""
    for name, t in params.items():
        if t.grad is None:
            raise RuntimeError(f"missing gradient for parameter {name!r}")
        buf = params.momentum[name]
        buf *= momentum
        buf += t.grad
        t.data -= lr * buf


# ---------------------------------------------------------------------------
# Convolution (stride 1, zero "same" padding or no padding)
# ---------------------------------------------------------------------------


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.ascontiguousarray(x, dtype=np.float32)


def _check_conv_args(x, kernel, bias, padding):
    if x.ndim != 4:
        raise ValueError(f"conv input must be BCHW, got {x.ndim}-D")
    if kernel.ndim != 4:
        raise ValueError(f"conv kernel must be OIHW, got {kernel.ndim}-D")
    oc, ic, kh, kw = kernel.shape
    if x.shape[1] != ic:
        raise ValueError(f"input has {x.shape[1]} channels, kernel expects {ic}")
    if bias.shape != (oc,):
        raise ValueError(f"bias shape {bias.shape} != ({oc},)")
    if padding not in ("same", "none"):
        raise ValueError(f"padding must be 'same' or 'none', got {padding!r}")
    if padding == "same" and (kh % 2 == 0 or kw % 2 == 0):
        raise ValueError("'same' padding requires odd kernel dims")
    if padding == "none" and (x.shape[2] < kh or x.shape[3] < kw):
        raise ValueError("input smaller than kernel with padding 'none'")


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(B, C, Hp, Wp) -> (B, C*kh*kw, Ho*Wo) patch matrix."""
    b, c, hp, wp = xp.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    if kh == 1 and kw == 1:
        return xp.reshape(b, c, ho * wo)
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + ho, j : j + wo]
    return cols.reshape(b, c * kh * kw, ho * wo)


def _conv_gemm(x, kernel, bias, padding):
    _check_conv_args(x, kernel, bias, padding)
    oc, ic, kh, kw = kernel.shape
    if padding == "same" and (kh > 1 or kw > 1):
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    else:
        xp = x
    cols = _im2col(xp, kh, kw)
    out = np.matmul(kernel.reshape(oc, ic * kh * kw), cols)
    out += bias.reshape(1, oc, 1)
    ho, wo = xp.shape[2] - kh + 1, xp.shape[3] - kw + 1
    return out.reshape(x.shape[0], oc, ho, wo), cols


def conv2d_forward(x, kernel, bias, padding: str = "same") -> np.ndarray:
    """Cross-correlation plus per-output-channel bias, stride 1."""
    out, _ = _conv_gemm(_as_array(x), _as_array(kernel), _as_array(bias), padding)
    return out


def _col2im(dcols, in_shape, kh, kw, padding):
    b, c, h, w = in_shape
    if padding == "same":
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
    else:
        ph = pw = 0
    hp, wp = h + 2 * ph, w + 2 * pw
    ho, wo = hp - kh + 1, wp - kw + 1
    if kh == 1 and kw == 1:
        # 1x1 never pads, so the patch matrix is the input layout itself.
        return np.ascontiguousarray(dcols.reshape(b, c, h, w))
    dcols = dcols.reshape(b, c, kh, kw, ho, wo)
    dxp = np.zeros((b, c, hp, wp), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + ho, j : j + wo] += dcols[:, :, i, j]
    if ph or pw:
        return dxp[:, :, ph : hp - ph, pw : wp - pw].copy()
    return dxp


# ---------------------------------------------------------------------------
# Layers: each forward optionally records its context into a caller-supplied
# dict so several forward passes through the same layer can coexist on
# independent tapes (the shared prediction head needs this).
# ---------------------------------------------------------------------------


def _require_ctx(ctx, key, op):
    if not isinstance(ctx, dict) or key not in ctx:
        raise RuntimeError(f"{op} backward called without a recorded forward context")
    return ctx[key]


class Conv2d:
    def __init__(self, kernel: Tensor, bias: Tensor, padding: str = "same"):
        self.kernel = kernel
        self.bias = bias
        self.padding = padding

    def forward(self, x: np.ndarray, train: bool = False, ctx: dict | None = None) -> np.ndarray:
        out, cols = _conv_gemm(x, self.kernel.data, self.bias.data, self.padding)
        if ctx is not None:
            ctx["cols"] = cols
            ctx["in_shape"] = x.shape
        return out

    def backward(self, gout: np.ndarray, ctx: dict, need_input_grad: bool = True):
        cols = _require_ctx(ctx, "cols", "conv2d")
        in_shape = ctx["in_shape"]
        oc, ic, kh, kw = self.kernel.shape
        g = np.ascontiguousarray(gout, dtype=np.float32).reshape(gout.shape[0], oc, -1)
        dw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
        self.kernel.add_grad(dw.reshape(self.kernel.shape))
        self.bias.add_grad(g.sum(axis=(0, 2)))
        if not need_input_grad:
            return None
        dcols = np.matmul(self.kernel.data.reshape(oc, ic * kh * kw).T, g)
        return _col2im(dcols, in_shape, kh, kw, self.padding)

    def params(self):
        return [("kernel", self.kernel), ("bias", self.bias)]


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(x, 0.0)


def relu_backward(gout: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pass gradient where x > 0; the subgradient at exactly 0 is 0."""
    return gout * (x > 0.0)


class ReLU:
    def forward(self, x: np.ndarray, train: bool = False, ctx: dict | None = None) -> np.ndarray:
        if ctx is not None:
            ctx["mask"] = x > 0.0
        return np.maximum(x, 0.0)

    def backward(self, gout: np.ndarray, ctx: dict, need_input_grad: bool = True):
        mask = _require_ctx(ctx, "mask", "relu")
        if not need_input_grad:
            return None
        return gout * mask


class BatchNorm2d:
    """Per-channel batch normalization over (batch, rows, cols).

    Train mode normalizes with batch statistics (population variance) and
    updates running stats with momentum 0.1; eval mode uses running stats.
    """

    EPS = 1e-5
    MOMENTUM = 0.1

    def __init__(self, scale: Tensor, shift: Tensor):
        if scale.shape != shift.shape or len(scale.shape) != 1:
            raise ValueError("scale/shift must be matching 1-D tensors")
        self.scale = scale
        self.shift = shift
        c = scale.shape[0]
        self.running_mean = np.zeros(c, dtype=np.float32)
        self.running_var = np.ones(c, dtype=np.float32)

    def forward(self, x: np.ndarray, train: bool = False, ctx: dict | None = None) -> np.ndarray:
        c = self.scale.shape[0]
        if x.ndim != 4 or x.shape[1] != c:
            raise ValueError(f"batchnorm expects (B, {c}, H, W) input, got {x.shape}")
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean = ((1.0 - self.MOMENTUM) * self.running_mean
                                 + self.MOMENTUM * mean).astype(np.float32)
            self.running_var = ((1.0 - self.MOMENTUM) * self.running_var
                                + self.MOMENTUM * var).astype(np.float32)
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.EPS)
        xhat = (x - mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
        if ctx is not None:
            ctx["xhat"] = xhat
            ctx["inv"] = inv
            ctx["train"] = train
        return self.scale.data.reshape(1, c, 1, 1) * xhat + self.shift.data.reshape(1, c, 1, 1)

    def backward(self, gout: np.ndarray, ctx: dict, need_input_grad: bool = True):
        xhat = _require_ctx(ctx, "xhat", "batchnorm")
        inv = ctx["inv"]
        c = self.scale.shape[0]
        self.shift.add_grad(gout.sum(axis=(0, 2, 3)))
        self.scale.add_grad((gout * xhat).sum(axis=(0, 2, 3)))
        if not need_input_grad:
            return None
        gxhat = gout * self.scale.data.reshape(1, c, 1, 1)
        if not ctx["train"]:
            return gxhat * inv.reshape(1, c, 1, 1)
        m1 = gxhat.mean(axis=(0, 2, 3)).reshape(1, c, 1, 1)
        m2 = (gxhat * xhat).mean(axis=(0, 2, 3)).reshape(1, c, 1, 1)
        return inv.reshape(1, c, 1, 1) * (gxhat - m1 - xhat * m2)

    def params(self):
        return [("scale", self.scale), ("shift", self.shift)]

    def state(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def load_state(self, running_mean: np.ndarray, running_var: np.ndarray) -> None:
        if running_mean.shape != self.running_mean.shape:
            raise ValueError("running_mean shape mismatch")
        if running_var.shape != self.running_var.shape:
            raise ValueError("running_var shape mismatch")
        self.running_mean = running_mean.astype(np.float32)
        self.running_var = running_var.astype(np.float32)


# ---------------------------------------------------------------------------
# Checkpoint container: ASCII manifest plus raw little-endian f32 payloads.
# ---------------------------------------------------------------------------


def save_checkpoint(path, meta: dict[str, str], entries: list[tuple[str, np.ndarray]]) -> None:
    """Write named float32 arrays with a one-line meta header.

    Layout: "MSCD1\\n", "meta k=v ...\\n", "tensors N\\n", N lines of
    "name dim0 dim1 ...", "end\\n", then the concatenated payloads.
    """
    lines = [CHECKPOINT_MAGIC]
    lines.append("meta " + " ".join(f"{k}={v}" for k, v in meta.items()))
    lines.append(f"tensors {len(entries)}")
    for name, arr in entries:
        if any(ch.isspace() for ch in name):
            raise ValueError(f"tensor name {name!r} contains whitespace")
        lines.append(name + " " + " ".join(str(d) for d in arr.shape))
    lines.append("end")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        for _, arr in entries:
            f.write(arr.astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        blob = f.read()
    try:
        head_end = blob.index(b"\nend\n") + len(b"\nend\n")
    except ValueError:
        raise CheckpointError(f"{path}: missing manifest terminator") from None
    lines = blob[:head_end].decode("ascii", errors="replace").splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, expected {CHECKPOINT_MAGIC!r}")
    if len(lines) < 3 or not lines[1].startswith("meta"):
        raise CheckpointError(f"{path}: missing meta line")
    meta = {}
    for tok in lines[1].split()[1:]:
        if "=" not in tok:
            raise CheckpointError(f"{path}: malformed meta token {tok!r}")
        k, v = tok.split("=", 1)
        meta[k] = v
    if not lines[2].startswith("tensors "):
        raise CheckpointError(f"{path}: missing tensor count")
    try:
        n = int(lines[2].split()[1])
    except (IndexError, ValueError):
        raise CheckpointError(f"{path}: bad tensor count") from None
    specs = lines[3:-1]
    if len(specs) != n:
        raise CheckpointError(f"{path}: manifest lists {len(specs)} tensors, header says {n}")
    entries: dict[str, np.ndarray] = {}
    pos = head_end
    for line in specs:
        parts = line.split()
        name, dims = parts[0], parts[1:]
        try:
            shape = tuple(int(d) for d in dims)
        except ValueError:
            raise CheckpointError(f"{path}: bad shape for tensor {name!r}") from None
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if pos + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
        entries[name] = np.frombuffer(blob[pos : pos + nbytes], dtype="<f4").reshape(shape).copy()
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes after payload")
    return meta, entries
