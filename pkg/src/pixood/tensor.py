"""Dense tensors on disk (the ``TNSR`` format) and 2-D map resizing.

Layout, all little-endian::

    b"TNSR" | dtype code (u8) | ndim (u8) | ndim x u64 dims | row-major payload

Dtype codes: 0=f32, 1=u8, 2=u16, 3=u64. Label maps are u16 ``[H, W]``,
score maps f32 ``[H, W]``, logits f32 ``[H, W, K]``, dropout stacks
f32 ``[T, H, W, K]``.
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

OOD_ID = 254
IGNORE_ID = 255

MAGIC = b"TNSR"

DTYPE_CODES = {
    0: np.dtype("<f4"),
    1: np.dtype("u1"),
    2: np.dtype("<u2"),
    3: np.dtype("<u8"),
}
_CODE_FOR = {dt: code for code, dt in DTYPE_CODES.items()}


class TensorFormatError(ValueError):
    """Base class for malformed or invalid TNSR content."""


class BadMagicError(TensorFormatError):
    pass


class TruncatedTensorError(TensorFormatError):
    pass


class NonFiniteTensorError(TensorFormatError):
    pass


class UnsupportedDtypeError(TensorFormatError):
    pass


def _dtype_code(dtype: np.dtype) -> int:
    dt = np.dtype(dtype).newbyteorder("<") if np.dtype(dtype).itemsize > 1 else np.dtype(dtype)
    try:
        return _CODE_FOR[dt]
    except KeyError:
        raise UnsupportedDtypeError(f"dtype {dtype} is not storable as TNSR") from None


def check_tensor(t: np.ndarray) -> None:
    """Raise if ``t`` violates the tensor invariants (shape, dtype, finiteness)."""
    _dtype_code(t.dtype)
    if t.ndim < 1 or t.ndim > 255:
        raise TensorFormatError(f"ndim must be in [1, 255], got {t.ndim}")
    if any(d < 1 for d in t.shape):
        raise TensorFormatError(f"every dimension must be >= 1, got shape {t.shape}")
    if t.dtype.kind == "f" and not np.isfinite(t).all():
        raise NonFiniteTensorError("tensor contains NaN or Inf")


def encode_tensor(t: np.ndarray) -> bytes:
    t = np.asarray(t)
    check_tensor(t)
    code = _dtype_code(t.dtype)
    header = MAGIC + struct.pack("<BB", code, t.ndim) + struct.pack(f"<{t.ndim}Q", *t.shape)
    payload = np.ascontiguousarray(t, dtype=DTYPE_CODES[code]).tobytes()
    return header + payload


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 6:
        raise TruncatedTensorError("buffer shorter than the fixed header")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    code, ndim = struct.unpack_from("<BB", buf, 4)
    if code not in DTYPE_CODES:
        raise UnsupportedDtypeError(f"unknown dtype code {code}")
    if ndim < 1:
        raise TensorFormatError("ndim must be >= 1")
    offset = 6 + 8 * ndim
    if len(buf) < offset:
        raise TruncatedTensorError("header truncated inside the dimension list")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 6)
    if any(d < 1 for d in shape):
        raise TensorFormatError(f"every dimension must be >= 1, got shape {shape}")
    dtype = DTYPE_CODES[code]
    nbytes = int(np.prod(shape, dtype=np.uint64)) * dtype.itemsize
    if len(buf) - offset < nbytes:
        raise TruncatedTensorError(f"payload has {len(buf) - offset} bytes, expected {nbytes}")
    if len(buf) - offset > nbytes:
        raise TensorFormatError("trailing bytes after payload")
    t = np.frombuffer(buf, dtype=dtype, offset=offset, count=nbytes // dtype.itemsize).reshape(shape)
    if dtype.kind == "f" and not np.isfinite(t).all():
        raise NonFiniteTensorError("tensor contains NaN or Inf")
    # native byte order, writable copy
    return t.astype(dtype.newbyteorder("="))


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file in the same directory and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_tensor(t: np.ndarray, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, encode_tensor(t))


# -- resizing ---------------------------------------------------------------
# Half-pixel-centre convention: output pixel d maps to source coordinate
# (d + 0.5) * in / out - 0.5.


def _source_coords(n_in: int, n_out: int) -> np.ndarray:
    return (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5


def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
    idx = np.floor((np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out)).astype(np.int64)
    return np.clip(idx, 0, n_in - 1)


def _check_size(out_h: int, out_w: int) -> None:
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be >= 1, got {out_h}x{out_w}")


def resize_nearest(labels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize of a 2-D (or leading-2-D) map. Preserves dtype."""
    _check_size(out_h, out_w)
    h, w = labels.shape[:2]
    if (h, w) == (out_h, out_w):
        return labels.copy()
    rows = _nearest_index(h, out_h)
    cols = _nearest_index(w, out_w)
    return labels[rows][:, cols]


def _linear_weights(n_in: int, n_out: int):
    src = np.clip(_source_coords(n_in, n_out), 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(scores: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a 2-D float map; output is f32 and stays within the input range."""
    _check_size(out_h, out_w)
    h, w = scores.shape[:2]
    if (h, w) == (out_h, out_w):
        return scores.astype(np.float32, copy=True)
    x = scores.astype(np.float64)
    lo, hi, frac = _linear_weights(h, out_h)
    x = x[lo] * (1.0 - frac)[:, None] + x[hi] * frac[:, None]
    lo, hi, frac = _linear_weights(w, out_w)
    x = x[:, lo] * (1.0 - frac) + x[:, hi] * frac
    # convex combinations can round a hair outside [min, max]
    x = np.clip(x, scores.min(), scores.max())
    return x.astype(np.float32)
