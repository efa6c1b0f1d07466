"""Raster containers and file I/O.

Two on-disk formats are supported: a bit-exact float32 container (.rf32)
and 8-bit netpbm (.pgm/.ppm) for interchange and map export.

.rf32 layout: one ASCII header line ``RF32 <rows> <cols> <bands>\\n``
followed immediately by rows*cols*bands IEEE-754 binary32 little-endian
samples in row-major, band-sequential order (band varies slowest).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

# Guards against absurd headers before any allocation happens.
MAX_SAMPLES = 1 << 31


class RasterFormatError(ValueError):
    """Malformed or truncated raster file; message carries the byte offset."""

    def __init__(self, path, offset: int, reason: str):
        super().__init__(f"{path}: byte {offset}: {reason}")
        self.offset = offset


@dataclass(frozen=True)
class SceneStats:
    """Per-band mean and standard deviation of a scene."""

    mean: np.ndarray
    std: np.ndarray


class Raster:
    """Multi-band image: float32 samples with shape (bands, rows, cols).

    Data is validated to be finite on construction and frozen afterwards;
    instances are safe to share across threads.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[np.newaxis, :, :]
        if arr.ndim != 3:
            raise ValueError(f"raster data must be 2-D or 3-D, got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("raster dimensions must be positive")
        if not np.isfinite(arr).all():
            raise ValueError("raster samples must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Raster is immutable")

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def rows(self) -> int:
        return self.data.shape[1]

    @property
    def cols(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def band(self, i: int) -> np.ndarray:
        return self.data[i]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Raster)
            and self.shape == other.shape
            and np.array_equal(self.data, other.data)
        )

    def __repr__(self) -> str:
        return f"Raster(bands={self.bands}, rows={self.rows}, cols={self.cols})"


def _parse_header_fields(path, line: bytes, offset: int, expect: int) -> list[int]:
    fields = line.split()
    if len(fields) != expect:
        raise RasterFormatError(path, offset, f"expected {expect} header fields, got {len(fields)}")
    out = []
    for tok in fields:
        try:
            val = int(tok)
        except ValueError:
            raise RasterFormatError(path, offset, f"non-integer header field {tok!r}") from None
        if val <= 0:
            raise RasterFormatError(path, offset, f"non-positive dimension {val}")
        out.append(val)
    return out


def _load_rf32(path) -> Raster:
    with open(path, "rb") as f:
        blob = f.read()
    nl = blob.find(b"\n", 0, 128)
    if nl < 0:
        raise RasterFormatError(path, 0, "missing header newline within 128 bytes")
    header = blob[:nl]
    if not header.startswith(b"RF32 "):
        raise RasterFormatError(path, 0, f"bad magic {header[:4]!r}, expected b'RF32'")
    rows, cols, bands = _parse_header_fields(path, header[5:], 5, 3)
    n = rows * cols * bands
    if n > MAX_SAMPLES:
        raise RasterFormatError(path, 5, f"dimension overflow: {rows}x{cols}x{bands} samples")
    payload = blob[nl + 1 :]
    if len(payload) != 4 * n:
        raise RasterFormatError(
            path, nl + 1 + len(payload), f"payload has {len(payload)} bytes, expected {4 * n}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(bands, rows, cols)
    if not np.isfinite(data).all():
        raise RasterFormatError(path, nl + 1, "payload contains non-finite samples")
    return Raster(data)


class _PnmScanner:
    """Token reader over netpbm headers that tracks byte offsets."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def token(self, path) -> bytes:
        b = self.blob
        i = len(b)
        while self.pos < i:
            c = b[self.pos]
            if c == ord("#"):
                nl = b.find(b"\n", self.pos)
                self.pos = i if nl < 0 else nl + 1
            elif c in b" \t\r\n":
                self.pos += 1
            else:
                break
        if self.pos >= i:
            raise RasterFormatError(path, self.pos, "unexpected end of header")
        start = self.pos
        while self.pos < i and self.blob[self.pos] not in b" \t\r\n":
            self.pos += 1
        return b[start : self.pos]


def _load_pnm(path) -> Raster:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 2:
        raise RasterFormatError(path, 0, "file too short for a netpbm header")
    magic = blob[:2]
    if magic not in (b"P2", b"P5", b"P3", b"P6"):
        raise RasterFormatError(path, 0, f"unsupported netpbm magic {magic!r}")
    bands = 3 if magic in (b"P3", b"P6") else 1
    ascii_data = magic in (b"P2", b"P3")

    sc = _PnmScanner(blob)
    sc.pos = 2
    dims = []
    for _ in range(3):
        off = sc.pos
        tok = sc.token(path)
        try:
            val = int(tok)
        except ValueError:
            raise RasterFormatError(path, off, f"non-integer header field {tok!r}") from None
        dims.append((off, val))
    (w_off, width), (h_off, height), (m_off, maxval) = dims
    if width <= 0:
        raise RasterFormatError(path, w_off, f"non-positive width {width}")
    if height <= 0:
        raise RasterFormatError(path, h_off, f"non-positive height {height}")
    if maxval != 255:
        raise RasterFormatError(path, m_off, f"unsupported maxval {maxval}, only 255")
    n = width * height * bands
    if n > MAX_SAMPLES:
        raise RasterFormatError(path, w_off, f"dimension overflow: {width}x{height}x{bands}")

    if ascii_data:
        values = blob[sc.pos :].split()
        if len(values) != n:
            raise RasterFormatError(path, sc.pos, f"expected {n} ASCII samples, got {len(values)}")
        try:
            flat = np.array([int(v) for v in values], dtype=np.int64)
        except ValueError:
            raise RasterFormatError(path, sc.pos, "non-integer sample") from None
        if flat.min() < 0 or flat.max() > 255:
            raise RasterFormatError(path, sc.pos, "sample out of [0, 255]")
    else:
        # Binary payload starts after exactly one whitespace byte past maxval.
        start = sc.pos + 1
        payload = blob[start : start + n]
        if len(payload) != n:
            raise RasterFormatError(
                path, start + len(payload), f"payload has {len(payload)} bytes, expected {n}"
            )
        flat = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)

    # Pixel-interleaved on disk -> band-sequential in memory.
    img = flat.reshape(height, width, bands).transpose(2, 0, 1)
    return Raster(img.astype(np.float32) / 255.0)


def load_raster(path) -> Raster:
    """Load a raster; the extension selects the format (.rf32/.pgm/.ppm).

    8-bit netpbm samples are scaled to [0, 1].
    """
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".rf32":
        return _load_rf32(path)
    if ext in (".pgm", ".ppm"):
        return _load_pnm(path)
    raise ValueError(f"{path}: unknown raster extension {ext!r}")


def save_raster(r: Raster, path) -> None:
    """Write a raster; .rf32 round-trips bit-exactly, .pgm/.ppm quantize to 8 bits.

    netpbm export maps [0, 1] to [0, 255] by rounding, so binary change maps
    ({0, 1}) come out as {0, 255}.
    """
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".rf32":
        with open(path, "wb") as f:
            f.write(f"RF32 {r.rows} {r.cols} {r.bands}\n".encode("ascii"))
            f.write(r.data.astype("<f4").tobytes())
        return
    if ext in (".pgm", ".ppm"):
        want = 3 if ext == ".ppm" else 1
        if r.bands != want:
            raise ValueError(f"{path}: {ext} requires {want} band(s), raster has {r.bands}")
        quant = np.rint(np.clip(r.data, 0.0, 1.0) * 255.0).astype(np.uint8)
        magic = b"P6" if want == 3 else b"P5"
        with open(path, "wb") as f:
            f.write(magic + f"\n{r.cols} {r.rows}\n255\n".encode("ascii"))
            f.write(quant.transpose(1, 2, 0).tobytes())
        return
    raise ValueError(f"{path}: unknown raster extension {ext!r}")


def replicate_band(r: Raster) -> Raster:
    """Replicate a single-band raster into three identical bands."""
    if r.bands != 1:
        raise ValueError(f"replicate_band requires a 1-band raster, got {r.bands} bands")
    return Raster(np.repeat(r.data, 3, axis=0))


def standardize(r: Raster) -> tuple[Raster, SceneStats]:
    """Zero-mean/unit-std each band over the whole scene (population std).

    Constant bands become all-zero and their std is recorded as 0.
    """
    data = r.data.astype(np.float64)
    mean = data.mean(axis=(1, 2))
    std = data.std(axis=(1, 2))
    out = np.zeros_like(data)
    for b in range(r.bands):
        if std[b] > 0.0:
            out[b] = (data[b] - mean[b]) / std[b]
    return Raster(out.astype(np.float32)), SceneStats(mean=mean, std=std)


def to_decibels(r: Raster, eps: float = 1e-6) -> Raster:
    """10*log10(x + eps) transform for SAR amplitude/intensity inputs."""
    if r.data.min() < 0.0:
        raise ValueError("decibel transform requires non-negative samples")
    return Raster(10.0 * np.log10(r.data.astype(np.float64) + eps))
