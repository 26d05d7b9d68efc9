"""Cycle-level model of the rescaling output-stationary systolic array.

Timing model (fixtures depend on it):

 * Operands are skewed by input/weight FIFOs, so PE (r, c) consumes stream
   token k at cycle ``pass_base + k + r + c``.
 * A tile pass over a tr x tc output tile streams K channels in calibrated
   group order with a 1-cycle rescale bubble at each of the G-1 group
   boundaries: stream length K + G - 1 tokens.
 * Per-pass cycles = fill + stream + drain, with fill = (tr-1)+(tc-1) (the
   skew) and drain = tc (one accumulator column written out per cycle).
   Consecutive tile passes do not overlap.
 * During a bubble the rescale signal rides the input wavefront; each PE
   shifts its accumulator left by one bit when the signal arrives (alpha = 2
   only).

The integer results are bit-identical to the implicit GEMM path; the float
outputs reuse the same final-scale dequantization.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .calibrate import ChunkPlan, DecompositionPlan, QuantizedActivation, QuantizedWeight
from .errors import AccumulatorOverflowError, ShapeError
from .qgemm import _correction_rows, dequantize_accumulator
from .tensor import FloatMatrix, IntMatrix, int_limit

_RESCALE = -1  # token sentinel in a stream schedule


@dataclass(frozen=True)
class SimConfig:
    """Array geometry and accumulator width for one simulation run."""

    pe_rows: int = 64
    pe_cols: int = 64
    pe_bits: int = 4
    acc_bits: int = 32
    int8_grouping: bool = True

    def __post_init__(self):
        if self.pe_rows < 1 or self.pe_cols < 1:
            raise ValueError("array dimensions must be positive")
        if self.pe_bits not in (4, 8):
            raise ValueError("PEs are 4- or 8-bit")
        if not 8 <= self.acc_bits <= 63:
            raise ValueError(f"accumulator width {self.acc_bits} outside 8..63")

    def effective_dims(self, operand_bits: int) -> tuple[int, int]:
        """Array extent seen by one GEMM; 8-bit operands on 4-bit PEs gang 4 PEs."""
        if self.int8_grouping and self.pe_bits == 4 and operand_bits == 8:
            return max(1, self.pe_rows // 2), max(1, self.pe_cols // 2)
        return self.pe_rows, self.pe_cols


@dataclass(frozen=True)
class StreamSchedule:
    """Channel streaming order for one chunk with rescale positions."""

    order: np.ndarray  # channel indices, group-ascending
    boundaries: np.ndarray  # cumulative channel counts after groups 1..G-1
    alpha: int

    @classmethod
    def from_chunk(cls, chunk: ChunkPlan, alpha: int) -> "StreamSchedule":
        return cls(chunk.permutation, chunk.group_boundaries[1:-1].copy(), alpha)

    def tokens(self) -> list[int]:
        """Channel indices interleaved with rescale sentinels (-1).

        Length K + G - 1; empty groups produce back-to-back sentinels.
        """
        toks: list[int] = []
        edges = list(self.boundaries) + [len(self.order)]
        prev = 0
        for i, b in enumerate(edges):
            toks.extend(int(c) for c in self.order[prev:b])
            if i != len(edges) - 1:
                toks.append(_RESCALE)
            prev = b
        return toks


@dataclass(frozen=True)
class SimReport:
    """Cycle counts plus the raw and dequantized results of one run."""

    outputs: IntMatrix
    outputs_float: FloatMatrix
    total_cycles: int
    bubble_cycles: int
    tile_passes: int
    rescale_events_per_pe: np.ndarray
    utilization: float
    overflow_flag: bool
    config: SimConfig
    trace: tuple[tuple[int, int, int], ...] | None = field(default=None, repr=False)


def trace_rescale_events(report: SimReport) -> list[tuple[int, int, int]]:
    """Ordered (cycle, pe_row, pe_col) rescale events; requires tracing."""
    if report.trace is None:
        raise ValueError("tracing was disabled for this run")
    return sorted(report.trace)


def _prepare(qa, qw, plan, cfg):
    if plan is not qa.plan and plan != qa.plan:
        raise ShapeError("activation was quantized with a different plan")
    if qa.data.cols != qw.data.rows:
        raise ShapeError(f"inner dimensions differ: {qa.data.shape} x {qw.data.shape}")
    if plan.alpha != 2:
        raise ValueError("the array rescales by 1-bit shifts; alpha must be 2")
    eff_rows, eff_cols = cfg.effective_dims(qa.data.bit_width)
    if plan.chunk_rows < eff_rows:
        raise ShapeError(
            f"row chunk size {plan.chunk_rows} smaller than array dimension {eff_rows}"
        )
    k = qa.data.cols
    needed = 2 * cfg.pe_bits + math.ceil(math.log2(max(k, 2)))
    if cfg.acc_bits < needed:
        warnings.warn(
            f"accumulator width {cfg.acc_bits} below recommended {needed} "
            f"for reduction length {k}",
            RuntimeWarning,
            stacklevel=3,
        )
    return eff_rows, eff_cols


def _tiles(start: int, stop: int, step: int):
    for t0 in range(start, stop, step):
        yield t0, min(t0 + step, stop)


def simulate_gemm(
    qa: QuantizedActivation,
    qw: QuantizedWeight,
    plan: DecompositionPlan,
    cfg: SimConfig = SimConfig(),
    correction: list[FloatMatrix] | None = None,
    trace: bool = False,
    raise_on_overflow: bool = True,
) -> SimReport:
    """Stream every chunk through the array with in-pass rescale bubbles."""
    eff_rows, eff_cols = _prepare(qa, qw, plan, cfg)
    a = qa.data.data
    wq = qw.data.data
    rows, n = a.shape[0], wq.shape[1]
    corr = _correction_rows(plan, qw, correction)
    limit = int_limit(cfg.acc_bits)
    out_int = np.zeros((rows, n), dtype=np.int64)
    out_f = np.empty((rows, n))
    events: list[tuple[int, int, int]] | None = [] if trace else None
    event_counts = np.zeros((eff_rows, eff_cols), dtype=np.int64)
    cycle = 0
    passes = 0
    bubbles = 0
    mac_pe_cycles = 0
    overflow = False
    for start, stop, ci in plan.apply_ranges(rows):
        chunk = plan.chunks[ci]
        toks = StreamSchedule.from_chunk(chunk, plan.alpha).tokens()
        for r0, r1 in _tiles(start, stop, eff_rows):
            for c0, c1 in _tiles(0, n, eff_cols):
                tr, tc = r1 - r0, c1 - c0
                acc = np.zeros((tr, tc), dtype=np.int64)
                fill = (tr - 1) + (tc - 1)
                for k, tok in enumerate(toks):
                    if tok == _RESCALE:
                        acc <<= 1
                        bubbles += 1
                        event_counts[:tr, :tc] += 1
                        if events is not None:
                            for r in range(tr):
                                for c in range(tc):
                                    events.append((cycle + k + r + c, r, c))
                    else:
                        acc += np.outer(a[r0:r1, tok], wq[tok, c0:c1])
                        mac_pe_cycles += tr * tc
                    worst = int(np.abs(acc).max())
                    if worst > limit:
                        overflow = True
                        if raise_on_overflow:
                            raise AccumulatorOverflowError(cfg.acc_bits, worst)
                out_int[r0:r1, c0:c1] = acc
                out_f[r0:r1, c0:c1] = dequantize_accumulator(
                    acc, chunk.ladder.scales[-1], qw.col_scales[c0:c1], corr[ci][c0:c1]
                )
                cycle += fill + len(toks) + tc
                passes += 1
    snap_bits = 32 if (cfg.acc_bits <= 32 and not overflow) else 64
    return SimReport(
        outputs=IntMatrix(out_int, snap_bits),
        outputs_float=FloatMatrix(out_f),
        total_cycles=cycle,
        bubble_cycles=bubbles,
        tile_passes=passes,
        rescale_events_per_pe=event_counts,
        utilization=mac_pe_cycles / (cycle * eff_rows * eff_cols) if cycle else 0.0,
        overflow_flag=overflow,
        config=cfg,
        trace=tuple(events) if events is not None else None,
    )


def simulate_explicit(
    qa: QuantizedActivation,
    qw: QuantizedWeight,
    plan: DecompositionPlan,
    cfg: SimConfig = SimConfig(),
    correction: list[FloatMatrix] | None = None,
    raise_on_overflow: bool = True,
) -> SimReport:
    """Naive per-group dataflow: one full tile pass per group, merged in float.

    Every group pays its own fill and drain (empty groups included), and
    each group past the first adds a float dequantize-accumulate sweep of
    one tile row per cycle. The first group's dequantization is shared with
    the implicit path's final scaling and is not charged. This dataflow has
    no final integer accumulator, so ``outputs`` carries the last group's
    integer partial; the float outputs are the ones to compare.
    """
    eff_rows, eff_cols = _prepare(qa, qw, plan, cfg)
    a = qa.data.data
    wq = qw.data.data
    rows, n = a.shape[0], wq.shape[1]
    corr = _correction_rows(plan, qw, correction)
    limit = int_limit(cfg.acc_bits)
    out_int = np.zeros((rows, n), dtype=np.int64)
    out_f = np.empty((rows, n))
    cycle = 0
    passes = 0
    mac_pe_cycles = 0
    overflow = False
    for start, stop, ci in plan.apply_ranges(rows):
        chunk = plan.chunks[ci]
        for r0, r1 in _tiles(start, stop, eff_rows):
            for c0, c1 in _tiles(0, n, eff_cols):
                tr, tc = r1 - r0, c1 - c0
                fill = (tr - 1) + (tc - 1)
                acc_f = np.zeros((tr, tc))
                last_p = np.zeros((tr, tc), dtype=np.int64)
                for g in range(1, plan.num_groups + 1):
                    chans = chunk.group_channels(g)
                    p = np.zeros((tr, tc), dtype=np.int64)
                    for ch in chans:
                        p += np.outer(a[r0:r1, ch], wq[ch, c0:c1])
                        mac_pe_cycles += tr * tc
                        worst = int(np.abs(p).max())
                        if worst > limit:
                            overflow = True
                            if raise_on_overflow:
                                raise AccumulatorOverflowError(cfg.acc_bits, worst)
                    acc_f += p * (chunk.ladder.scales[g - 1] * qw.col_scales[c0:c1])[None, :]
                    last_p = p
                    cycle += fill + chans.size + tc
                    passes += 1
                cycle += (plan.num_groups - 1) * tr
                out_int[r0:r1, c0:c1] = last_p
                out_f[r0:r1, c0:c1] = acc_f + corr[ci][None, c0:c1]
    snap_bits = 32 if (cfg.acc_bits <= 32 and not overflow) else 64
    return SimReport(
        outputs=IntMatrix(out_int, snap_bits),
        outputs_float=FloatMatrix(out_f),
        total_cycles=cycle,
        bubble_cycles=0,
        tile_passes=passes,
        rescale_events_per_pe=np.zeros((eff_rows, eff_cols), dtype=np.int64),
        utilization=mac_pe_cycles / (cycle * eff_rows * eff_cols) if cycle else 0.0,
        overflow_flag=overflow,
        config=cfg,
        trace=None,
    )
