"""Dense 2-D tensor types, symmetric quantization primitives, and error metrics.

Activations are row-major (rows = tokens, cols = channels/features). Floats
are kept in float64 throughout; integers are stored in int64 regardless of
their logical bit width, which is tracked separately and range-checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AccumulatorOverflowError, ShapeError

PER_TENSOR = "per_tensor"
PER_ROW = "per_row"
PER_COLUMN = "per_column"
GRANULARITIES = (PER_TENSOR, PER_ROW, PER_COLUMN)

# 64 admitted for wide accumulator snapshots only; never serialized.
INT_BIT_WIDTHS = (4, 8, 16, 32, 64)
QUANT_BIT_WIDTHS = (4, 8, 16)


def int_limit(bits: int) -> int:
    """Largest magnitude representable in the symmetric b-bit range."""
    return (1 << (bits - 1)) - 1


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest with ties away from zero (odd function)."""
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FloatMatrix:
    """Immutable row-major float64 matrix; all values finite."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 2 or a.size == 0:
            raise ShapeError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix contains NaN or Inf")
        object.__setattr__(self, "data", _freeze(a))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        return isinstance(other, FloatMatrix) and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class IntMatrix:
    """Immutable signed-integer matrix with a declared logical bit width.

    Elements stay inside the symmetric range +/-(2^(b-1)-1); the asymmetric
    minimum -2^(b-1) is never admitted.
    """

    data: np.ndarray
    bit_width: int

    def __post_init__(self):
        if self.bit_width not in INT_BIT_WIDTHS:
            raise ValueError(f"unsupported bit width {self.bit_width}")
        a = np.asarray(self.data)
        if not np.issubdtype(a.dtype, np.integer):
            raise ValueError("IntMatrix requires integer data")
        a = a.astype(np.int64)
        if a.ndim != 2 or a.size == 0:
            raise ShapeError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
        limit = int_limit(self.bit_width)
        worst = int(np.abs(a).max())
        if worst > limit:
            raise ValueError(
                f"value {worst} outside symmetric {self.bit_width}-bit range +/-{limit}"
            )
        object.__setattr__(self, "data", _freeze(a))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        return (
            isinstance(other, IntMatrix)
            and self.bit_width == other.bit_width
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class QuantParams:
    """Scale factors for one quantization call at a given granularity."""

    granularity: str
    scales: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"unknown granularity {self.granularity!r}")
        s = np.asarray(self.scales, dtype=np.float64).ravel()
        if np.any(s <= 0):
            raise ValueError("scales must be strictly positive")
        object.__setattr__(self, "scales", _freeze(s))


def _group_scales(x: np.ndarray, bits: int, granularity: str) -> np.ndarray:
    limit = int_limit(bits)
    if granularity == PER_TENSOR:
        absmax = np.array([np.abs(x).max()])
    elif granularity == PER_ROW:
        absmax = np.abs(x).max(axis=1)
    else:
        absmax = np.abs(x).max(axis=0)
    # all-zero group: scale 1 by convention, quantized values come out 0;
    # subnormal maxima would underflow the division, so floor at tiny
    scales = np.maximum(absmax / limit, np.finfo(np.float64).tiny)
    return np.where(absmax == 0.0, 1.0, scales)


def quantize_symmetric(
    x: FloatMatrix, bits: int, granularity: str = PER_TENSOR
) -> tuple[IntMatrix, QuantParams]:
    """Uniform symmetric quantization: s = absmax/(2^(b-1)-1), q = round(x/s).

    Rounding is half-away-from-zero and results saturate to the symmetric
    range, which only matters for inputs outside the calibrated group range.
    """
    if bits not in QUANT_BIT_WIDTHS:
        raise ValueError(f"quantization bit width must be one of {QUANT_BIT_WIDTHS}")
    if granularity not in GRANULARITIES:
        raise ValueError(f"unknown granularity {granularity!r}")
    scales = _group_scales(x.data, bits, granularity)
    if granularity == PER_ROW:
        div = scales[:, None]
    elif granularity == PER_COLUMN:
        div = scales[None, :]
    else:
        div = scales[0]
    limit = int_limit(bits)
    q = np.clip(round_half_away(x.data / div), -limit, limit).astype(np.int64)
    return IntMatrix(q, bits), QuantParams(granularity, scales)


def dequantize(q: IntMatrix, params: QuantParams) -> FloatMatrix:
    """Restore floats by multiplying quantized values with their scale."""
    s = params.scales
    if params.granularity == PER_TENSOR:
        if s.size != 1:
            raise ShapeError("per-tensor params must carry exactly one scale")
        out = q.data * s[0]
    elif params.granularity == PER_ROW:
        if s.size != q.rows:
            raise ShapeError(f"expected {q.rows} row scales, got {s.size}")
        out = q.data * s[:, None]
    else:
        if s.size != q.cols:
            raise ShapeError(f"expected {q.cols} column scales, got {s.size}")
        out = q.data * s[None, :]
    return FloatMatrix(out)


def channel_bias(x: FloatMatrix) -> np.ndarray:
    """Per-channel (max+min)/2; subtracting it equalizes max and min magnitude."""
    return (x.data.max(axis=0) + x.data.min(axis=0)) / 2.0


def channel_absmax(x: FloatMatrix) -> tuple[np.ndarray, float]:
    """Per-channel absolute maxima and the tensor-wide maximum of those.

    Assumes any channel bias was already subtracted by the caller.
    """
    cmax = np.abs(x.data).max(axis=0)
    return cmax, float(cmax.max())


def matmul_float(a: FloatMatrix, w: FloatMatrix) -> FloatMatrix:
    if a.cols != w.rows:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {w.shape}")
    return FloatMatrix(a.data @ w.data)


def matmul_int_wide(a: IntMatrix, w: IntMatrix, out_bits: int = 32) -> IntMatrix:
    """Integer product accumulated in int64, checked against out_bits."""
    if a.cols != w.rows:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {w.shape}")
    prod = a.data @ w.data
    worst = int(np.abs(prod).max())
    if worst > int_limit(out_bits):
        raise AccumulatorOverflowError(out_bits, worst)
    return IntMatrix(prod, out_bits)


def error_metrics(ref: FloatMatrix, approx: FloatMatrix) -> dict[str, float]:
    """MSE, max absolute error, and SQNR in dB (inf when the error is zero)."""
    if ref.shape != approx.shape:
        raise ShapeError(f"shape mismatch: {ref.shape} vs {approx.shape}")
    err = ref.data - approx.data
    err_power = float(np.mean(err * err))
    sig_power = float(np.mean(ref.data * ref.data))
    if err_power == 0.0:
        sqnr = math.inf
    else:
        sqnr = 10.0 * math.log10(sig_power / err_power) if sig_power > 0 else -math.inf
    return {
        "mse": err_power,
        "max_abs_err": float(np.abs(err).max()),
        "sqnr_db": sqnr,
    }
