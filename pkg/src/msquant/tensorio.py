"""Binary tensor container.

Layout: magic "TNSR", version uint32 LE (=1), dtype code uint8, ndim uint8
(=2), ndim x uint64 LE dims, then raw row-major element data, little-endian.
Round trips are bit-exact for a given dtype code.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .tensor import FloatMatrix, IntMatrix, int_limit

MAGIC = b"TNSR"
VERSION = 1

DTYPE_FLOAT64 = 0
DTYPE_INT8 = 1
DTYPE_INT32 = 2
DTYPE_FLOAT32 = 3

_NUMPY_OF = {
    DTYPE_FLOAT64: np.dtype("<f8"),
    DTYPE_INT8: np.dtype("<i1"),
    DTYPE_INT32: np.dtype("<i4"),
    DTYPE_FLOAT32: np.dtype("<f4"),
}


def default_dtype_code(m: FloatMatrix | IntMatrix) -> int:
    if isinstance(m, FloatMatrix):
        return DTYPE_FLOAT64
    return DTYPE_INT8 if m.bit_width <= 8 else DTYPE_INT32


def dump_bytes(m: FloatMatrix | IntMatrix, dtype_code: int | None = None) -> bytes:
    if dtype_code is None:
        dtype_code = default_dtype_code(m)
    if dtype_code not in _NUMPY_OF:
        raise DataFormatError(f"unknown dtype code {dtype_code}")
    np_dtype = _NUMPY_OF[dtype_code]
    if isinstance(m, IntMatrix):
        if dtype_code not in (DTYPE_INT8, DTYPE_INT32):
            raise DataFormatError("integer matrix requires an integer dtype code")
        info = np.iinfo(np_dtype)
        if int(np.abs(m.data).max()) > info.max:
            raise DataFormatError(
                f"{m.bit_width}-bit values do not fit dtype code {dtype_code}"
            )
        payload = m.data.astype(np_dtype)
    else:
        if dtype_code not in (DTYPE_FLOAT64, DTYPE_FLOAT32):
            raise DataFormatError("float matrix requires a float dtype code")
        payload = m.data.astype(np_dtype)
    header = MAGIC + struct.pack("<IBB", VERSION, dtype_code, 2)
    header += struct.pack("<QQ", m.rows, m.cols)
    return header + payload.tobytes()


def load_bytes(raw: bytes) -> FloatMatrix | IntMatrix:
    if len(raw) < 10 or raw[:4] != MAGIC:
        raise DataFormatError("bad magic bytes: not a TNSR container")
    version, dtype_code, ndim = struct.unpack_from("<IBB", raw, 4)
    if version != VERSION:
        raise DataFormatError(f"unsupported container version {version}")
    if dtype_code not in _NUMPY_OF:
        raise DataFormatError(f"unknown dtype code {dtype_code}")
    if ndim != 2:
        raise DataFormatError(f"expected 2-D tensor, got ndim={ndim}")
    offset = 10
    if len(raw) < offset + 16:
        raise DataFormatError("truncated dimension header")
    rows, cols = struct.unpack_from("<QQ", raw, offset)
    offset += 16
    np_dtype = _NUMPY_OF[dtype_code]
    expected = rows * cols * np_dtype.itemsize
    body = raw[offset:]
    if len(body) != expected:
        raise DataFormatError(
            f"payload size {len(body)} does not match {rows}x{cols} of dtype {dtype_code}"
        )
    data = np.frombuffer(body, dtype=np_dtype).reshape(rows, cols)
    if dtype_code in (DTYPE_FLOAT64, DTYPE_FLOAT32):
        try:
            return FloatMatrix(data.astype(np.float64))
        except ValueError as exc:
            raise DataFormatError(str(exc)) from exc
    bits = 8 if dtype_code == DTYPE_INT8 else 32
    arr = data.astype(np.int64)
    if int(np.abs(arr).max(initial=0)) > int_limit(bits):
        raise DataFormatError(f"value outside symmetric {bits}-bit range")
    return IntMatrix(arr, bits)


def dump(m: FloatMatrix | IntMatrix, path: str | Path, dtype_code: int | None = None) -> None:
    Path(path).write_bytes(dump_bytes(m, dtype_code))


def load(path: str | Path) -> FloatMatrix | IntMatrix:
    return load_bytes(Path(path).read_bytes())
