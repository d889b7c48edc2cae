"""Minimal NPY v1.0 reader/writer for float tensors.

The on-disk contract is deliberately narrow: version 1.0 headers,
little-endian f32/f64 payloads, C order. Written files always use f32 and
round-trip bit-exactly. Reads validate finiteness so no NaN/Inf ever enters
the pipeline.
"""

from __future__ import annotations

import ast
import struct
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, UnsupportedDtypeError

_MAGIC = b"\x93NUMPY"


def _check_finite(arr: np.ndarray, path) -> None:
    finite = np.isfinite(arr)
    if not finite.all():
        flat = int(np.argmin(finite.ravel()))
        idx = tuple(int(i) for i in np.unravel_index(flat, arr.shape)) if arr.ndim else ()
        raise DataError(f"{path}: non-finite value {arr.ravel()[flat]!r} at index {idx}")


def npy_read(path) -> np.ndarray:
    """Read an NPY v1.0 file into a C-order float32 array.

    Raises FormatError for malformed containers, UnsupportedDtypeError for
    non-float payloads, DataError for NaN/Inf elements.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 10 or raw[:6] != _MAGIC:
        raise FormatError(f"{path}: not an NPY file (bad magic)")
    major, minor = raw[6], raw[7]
    if (major, minor) != (1, 0):
        raise FormatError(f"{path}: unsupported NPY version {major}.{minor}")
    (header_len,) = struct.unpack("<H", raw[8:10])
    header_end = 10 + header_len
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated header")
    try:
        header = ast.literal_eval(raw[10:header_end].decode("latin1").strip())
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{path}: unparsable header: {exc}") from exc
    if not isinstance(header, dict) or not {"descr", "fortran_order", "shape"} <= header.keys():
        raise FormatError(f"{path}: header missing required fields")
    descr = header["descr"]
    if descr not in ("<f4", "<f8"):
        raise UnsupportedDtypeError(f"{path}: dtype {descr!r} not supported (expect <f4 or <f8)")
    if header["fortran_order"]:
        raise FormatError(f"{path}: Fortran-order payloads are not supported")
    shape = header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise FormatError(f"{path}: invalid shape {shape!r}")
    itemsize = 4 if descr == "<f4" else 8
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = raw[header_end:]
    if len(payload) != count * itemsize:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {count * itemsize}"
        )
    arr = np.frombuffer(payload, dtype=np.dtype(descr)).reshape(shape)
    _check_finite(arr, path)
    out = arr.astype(np.float32)
    # f8 values can overflow to Inf when narrowed.
    _check_finite(out, path)
    return out


def npy_write(tensor: np.ndarray, path) -> None:
    """Write a tensor as NPY v1.0, little-endian f32, C order."""
    path = Path(path)
    arr = np.ascontiguousarray(np.asarray(tensor), dtype=np.float32)
    shape = arr.shape
    shape_repr = "(%s)" % (", ".join(str(d) for d in shape) + ("," if len(shape) == 1 else ""))
    if len(shape) == 0:
        shape_repr = "()"
    header = "{'descr': '<f4', 'fortran_order': False, 'shape': %s, }" % shape_repr
    # Pad so the payload starts on a 64-byte boundary, newline-terminated.
    unpadded = len(_MAGIC) + 2 + 2 + len(header) + 1
    header = header + " " * (-unpadded % 64) + "\n"
    try:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(bytes((1, 0)))
            fh.write(struct.pack("<H", len(header)))
            fh.write(header.encode("latin1"))
            fh.write(arr.tobytes(order="C"))
    except OSError as exc:
        raise FormatError(f"{path}: write failed: {exc}") from exc
