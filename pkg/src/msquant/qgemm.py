"""Quantized GEMM paths over a decomposition plan.

Two routes produce the same answer from the same integers:

 * explicit  -- each group's integer partial product is dequantized with its
   own scale and the float results are summed.
 * implicit  -- groups stream in ascending index (descending scale); between
   groups the integer accumulator is multiplied by alpha (a 1-bit shift for
   alpha = 2) and only the final accumulator is dequantized, with the
   smallest scale.

Because adjacent ladder scales are exactly alpha apart, the two are
algebraically identical; the implicit route never leaves integer arithmetic
until the very end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibrate import (
    DecompositionPlan,
    QuantizedActivation,
    QuantizedWeight,
    bias_correction,
    build_plan,
    quantize_activation,
    quantize_weight,
)
from .errors import AccumulatorOverflowError, ShapeError
from .tensor import FloatMatrix, IntMatrix, error_metrics, int_limit, matmul_float

DEFAULT_ACC_BITS = 32


@dataclass(frozen=True)
class GemmResult:
    """Output of a quantized GEMM plus optional integer-stage evidence."""

    output: FloatMatrix
    int_partials: tuple[IntMatrix, ...] | None
    int_accumulator: IntMatrix | None
    overflow_flag: bool
    mac_ops: int


def _check_operands(qa: QuantizedActivation, qw: QuantizedWeight, plan: DecompositionPlan):
    if plan is not qa.plan and plan != qa.plan:
        raise ShapeError("activation was quantized with a different plan")
    if qa.data.cols != qw.data.rows:
        raise ShapeError(
            f"inner dimensions differ: {qa.data.shape} x {qw.data.shape}"
        )


def _dequantized_weight(qw: QuantizedWeight) -> np.ndarray:
    return qw.data.data * qw.col_scales[None, :]


def _correction_rows(
    plan: DecompositionPlan, qw: QuantizedWeight, correction: list[FloatMatrix] | None
) -> list[np.ndarray]:
    if correction is None:
        wdq = _dequantized_weight(qw)
        return [c.bias @ wdq for c in plan.chunks]
    if len(correction) != len(plan.chunks):
        raise ShapeError("one correction row per chunk required")
    return [c.data[0] for c in correction]


class _BoundCheck:
    """Tracks the worst accumulator magnitude against a declared bit width."""

    def __init__(self, acc_bits: int, raise_on_overflow: bool):
        if not 8 <= acc_bits <= 63:
            raise ValueError(f"accumulator width {acc_bits} outside 8..63")
        self.limit = int_limit(acc_bits)
        self.acc_bits = acc_bits
        self.raise_on_overflow = raise_on_overflow
        self.overflowed = False

    def check(self, values: np.ndarray) -> None:
        if values.size == 0:
            return
        worst = int(np.abs(values).max())
        if worst > self.limit:
            self.overflowed = True
            if self.raise_on_overflow:
                raise AccumulatorOverflowError(self.acc_bits, worst)

    def snapshot_bits(self) -> int:
        if self.acc_bits <= 32 and not self.overflowed:
            return 32
        return 64


def gemm_explicit(
    qa: QuantizedActivation,
    qw: QuantizedWeight,
    plan: DecompositionPlan,
    acc_bits: int = DEFAULT_ACC_BITS,
    correction: list[FloatMatrix] | None = None,
    trace_partials: bool = False,
    raise_on_overflow: bool = True,
) -> GemmResult:
    """Per-group integer matmuls, each dequantized with its own scale and summed."""
    _check_operands(qa, qw, plan)
    a = qa.data.data
    wq = qw.data.data
    rows, n = a.shape[0], wq.shape[1]
    corr = _correction_rows(plan, qw, correction)
    guard = _BoundCheck(acc_bits, raise_on_overflow)
    out = np.empty((rows, n))
    partials = (
        [np.zeros((rows, n), dtype=np.int64) for _ in range(plan.num_groups)]
        if trace_partials
        else None
    )
    mac_ops = 0
    for start, stop, ci in plan.apply_ranges(rows):
        chunk = plan.chunks[ci]
        acc_f = np.zeros((stop - start, n))
        for g in range(1, plan.num_groups + 1):
            chans = chunk.group_channels(g)
            if chans.size:
                p = a[start:stop, chans] @ wq[chans, :]
                mac_ops += (stop - start) * chans.size * n
            else:
                p = np.zeros((stop - start, n), dtype=np.int64)
            guard.check(p)
            acc_f += p * (chunk.ladder.scales[g - 1] * qw.col_scales)[None, :]
            if partials is not None:
                partials[g - 1][start:stop] = p
        out[start:stop] = acc_f + corr[ci][None, :]
    return GemmResult(
        output=FloatMatrix(out),
        int_partials=_freeze_partials(partials, guard),
        int_accumulator=None,
        overflow_flag=guard.overflowed,
        mac_ops=mac_ops,
    )


def gemm_implicit(
    qa: QuantizedActivation,
    qw: QuantizedWeight,
    plan: DecompositionPlan,
    acc_bits: int = DEFAULT_ACC_BITS,
    correction: list[FloatMatrix] | None = None,
    trace_partials: bool = False,
    raise_on_overflow: bool = True,
) -> GemmResult:
    """Single streaming pass with integer rescaling between groups.

    Groups are processed in ascending index so the accumulated value always
    carries the larger scale; multiplying the accumulator by alpha before
    each next group keeps everything on that group's scale. Empty groups
    still rescale, matching the ladder algebra.
    """
    _check_operands(qa, qw, plan)
    a = qa.data.data
    wq = qw.data.data
    rows, n = a.shape[0], wq.shape[1]
    corr = _correction_rows(plan, qw, correction)
    guard = _BoundCheck(acc_bits, raise_on_overflow)
    out = np.empty((rows, n))
    acc_full = np.zeros((rows, n), dtype=np.int64)
    partials = (
        [np.zeros((rows, n), dtype=np.int64) for _ in range(plan.num_groups)]
        if trace_partials
        else None
    )
    mac_ops = 0
    for start, stop, ci in plan.apply_ranges(rows):
        chunk = plan.chunks[ci]
        acc = np.zeros((stop - start, n), dtype=np.int64)
        for g in range(1, plan.num_groups + 1):
            if g > 1:
                acc *= plan.alpha
                guard.check(acc)
            chans = chunk.group_channels(g)
            if chans.size:
                acc += a[start:stop, chans] @ wq[chans, :]
                mac_ops += (stop - start) * chans.size * n
                guard.check(acc)
            if partials is not None:
                partials[g - 1][start:stop] = acc
        final = dequantize_accumulator(acc, chunk.ladder.scales[-1], qw.col_scales, corr[ci])
        out[start:stop] = final
        acc_full[start:stop] = acc
    return GemmResult(
        output=FloatMatrix(out),
        int_partials=_freeze_partials(partials, guard),
        int_accumulator=IntMatrix(acc_full, guard.snapshot_bits()),
        overflow_flag=guard.overflowed,
        mac_ops=mac_ops,
    )


def dequantize_accumulator(
    acc: np.ndarray, last_scale: float, col_scales: np.ndarray, corr_row: np.ndarray
) -> np.ndarray:
    """Final-scale dequantization plus bias correction (shared with the simulator)."""
    return acc * (last_scale * col_scales)[None, :] + corr_row[None, :]


def _freeze_partials(partials, guard: _BoundCheck):
    if partials is None:
        return None
    bits = guard.snapshot_bits()
    return tuple(IntMatrix(p, bits) for p in partials)


def gemm_reference(x: FloatMatrix, w: FloatMatrix) -> FloatMatrix:
    """Plain float64 GEMM, the baseline every quantized path is judged against."""
    return matmul_float(x, w)


@dataclass(frozen=True)
class PathComparison:
    plan: DecompositionPlan
    qa: QuantizedActivation
    qw: QuantizedWeight
    reference: FloatMatrix
    results: dict[str, GemmResult]
    metrics: dict[str, dict[str, float]]


def compare_paths(
    x: FloatMatrix,
    w: FloatMatrix,
    bits: int = 8,
    alpha: int = 2,
    num_groups: int = 8,
    chunk_rows: int = 256,
    plan: DecompositionPlan | None = None,
    acc_bits: int = DEFAULT_ACC_BITS,
) -> PathComparison:
    """Run explicit and implicit paths against the float reference.

    Without an explicit plan the activation calibrates on itself, which is
    the right mode for error studies; deployment passes a plan built from a
    separate calibration set.
    """
    if x.cols != w.rows:
        raise ShapeError(f"inner dimensions differ: {x.shape} x {w.shape}")
    if plan is None:
        plan = build_plan([x], bits=bits, alpha=alpha, num_groups=num_groups, chunk_rows=chunk_rows)
    qa = quantize_activation(x, plan)
    qw = quantize_weight(w, plan.bit_width)
    corr = bias_correction(plan, w)
    ref = gemm_reference(x, w)
    results = {
        "explicit": gemm_explicit(qa, qw, plan, acc_bits=acc_bits, correction=corr),
        "implicit": gemm_implicit(qa, qw, plan, acc_bits=acc_bits, correction=corr),
    }
    metrics = {name: error_metrics(ref, res.output) for name, res in results.items()}
    return PathComparison(plan, qa, qw, ref, results, metrics)
