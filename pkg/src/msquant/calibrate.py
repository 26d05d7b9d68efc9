"""Offline calibration: channel biases, scale ladders, group assignment, plans.

A plan is built once from calibration samples and then applied at runtime.
Channels of each row chunk are classified into groups whose scale factors sit
an exact factor of alpha apart, so partial sums of consecutive groups can be
merged with integer rescaling alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import (
    FloatMatrix,
    IntMatrix,
    QUANT_BIT_WIDTHS,
    int_limit,
    round_half_away,
)

DEFAULT_CHUNK_ROWS = 256


@dataclass(frozen=True)
class GroupLadder:
    """Scale factors tmax/(alpha^(g-1) * (2^(b-1)-1)) for groups g = 1..G.

    Adjacent scales are exactly alpha apart (bit-exact for alpha = 2, where
    every division is a float exponent shift).
    """

    tmax: float
    alpha: int
    num_groups: int
    bit_width: int
    scales: np.ndarray = field(repr=False)

    @property
    def boundaries(self) -> np.ndarray:
        """Lower group boundaries tmax/alpha^g for g = 1..G."""
        denom = self.alpha ** np.arange(1, self.num_groups + 1, dtype=object)
        return self.tmax / denom.astype(np.float64)

    def __eq__(self, other):
        return (
            isinstance(other, GroupLadder)
            and self.tmax == other.tmax
            and self.alpha == other.alpha
            and self.num_groups == other.num_groups
            and self.bit_width == other.bit_width
            and np.array_equal(self.scales, other.scales)
        )


def build_ladder(tmax: float, alpha: int, num_groups: int, bits: int) -> GroupLadder:
    """Derive the group scale ladder from the tensor-wide absolute maximum."""
    if not (isinstance(alpha, (int, np.integer)) and alpha >= 2):
        raise ValueError(f"alpha must be an integer >= 2, got {alpha!r}")
    if num_groups < 1:
        raise ValueError(f"need at least one group, got {num_groups}")
    if bits not in QUANT_BIT_WIDTHS:
        raise ValueError(f"bit width must be one of {QUANT_BIT_WIDTHS}")
    if not (np.isfinite(tmax) and tmax >= 0):
        raise ValueError(f"tmax must be finite and non-negative, got {tmax!r}")
    if tmax == 0.0:
        scales = np.ones(num_groups)
    else:
        limit = int_limit(bits)
        denom = (int(alpha) ** np.arange(num_groups, dtype=object)) * limit
        scales = tmax / denom.astype(np.float64)
        if scales[-1] == 0.0:
            raise ValueError(f"tmax {tmax} too small for {num_groups} scale levels")
    return GroupLadder(float(tmax), int(alpha), int(num_groups), int(bits), scales)


def classify_channel(cmax_i: float, ladder: GroupLadder) -> int:
    """Assign a channel to the group g with tmax/alpha^g < cmax <= tmax/alpha^(g-1).

    Channels at or below the lowest boundary (including all-zero channels)
    are clamped into the last group, whose scale is the smallest.
    """
    if cmax_i < 0 or cmax_i > ladder.tmax:
        raise ValueError(f"cmax {cmax_i} outside [0, tmax={ladder.tmax}]")
    if ladder.tmax == 0.0:
        return ladder.num_groups
    for g, lower in enumerate(ladder.boundaries, start=1):
        if cmax_i > lower:
            return g
    return ladder.num_groups


@dataclass(frozen=True)
class ChunkPlan:
    """Calibration metadata for one contiguous block of token rows."""

    row_range: tuple[int, int]
    bias: np.ndarray
    cmax: np.ndarray
    ladder: GroupLadder
    group_of: np.ndarray  # entries in 1..G, channel order
    permutation: np.ndarray  # channel indices, group-ascending, stable
    group_boundaries: np.ndarray  # G+1 offsets into permutation

    @property
    def cols(self) -> int:
        return self.bias.size

    def group_channels(self, g: int) -> np.ndarray:
        """Channel indices of group g (1-indexed), in streaming order."""
        lo, hi = self.group_boundaries[g - 1], self.group_boundaries[g]
        return self.permutation[lo:hi]

    def channel_scales(self) -> np.ndarray:
        """Per-channel scale in original channel order."""
        return self.ladder.scales[self.group_of - 1]

    def __eq__(self, other):
        return (
            isinstance(other, ChunkPlan)
            and self.row_range == other.row_range
            and np.array_equal(self.bias, other.bias)
            and np.array_equal(self.cmax, other.cmax)
            and self.ladder == other.ladder
            and np.array_equal(self.group_of, other.group_of)
            and np.array_equal(self.permutation, other.permutation)
            and np.array_equal(self.group_boundaries, other.group_boundaries)
        )


@dataclass(frozen=True)
class DecompositionPlan:
    """Full calibrated plan: one ChunkPlan per row chunk plus the knobs used."""

    cols: int
    chunk_rows: int
    chunks: tuple[ChunkPlan, ...]
    bit_width: int
    alpha: int
    num_groups: int

    def chunk_index(self, row: int) -> int:
        # rows past the calibrated range reuse the last chunk's metadata
        return min(row // self.chunk_rows, len(self.chunks) - 1)

    def apply_ranges(self, n_rows: int) -> list[tuple[int, int, int]]:
        """Contiguous (start, stop, chunk_index) spans covering rows 0..n_rows."""
        out = []
        start = 0
        while start < n_rows:
            idx = self.chunk_index(start)
            if idx == len(self.chunks) - 1:
                stop = n_rows
            else:
                stop = min((start // self.chunk_rows + 1) * self.chunk_rows, n_rows)
            out.append((start, stop, idx))
            start = stop
        return out

    def __eq__(self, other):
        return (
            isinstance(other, DecompositionPlan)
            and self.cols == other.cols
            and self.chunk_rows == other.chunk_rows
            and self.bit_width == other.bit_width
            and self.alpha == other.alpha
            and self.num_groups == other.num_groups
            and self.chunks == other.chunks
        )


@dataclass(frozen=True)
class QuantizedWeight:
    """Integer weight matrix with one scale per output column."""

    data: IntMatrix
    col_scales: np.ndarray

    def __post_init__(self):
        if self.col_scales.size != self.data.cols:
            raise ShapeError("one scale per weight column required")


@dataclass(frozen=True)
class QuantizedActivation:
    """Quantized activation in original channel order plus the plan used."""

    data: IntMatrix
    plan: DecompositionPlan

    def __post_init__(self):
        if self.data.cols != self.plan.cols:
            raise ShapeError(
                f"activation has {self.data.cols} channels, plan expects {self.plan.cols}"
            )


def _chunk_spans(total_rows: int, chunk_rows: int) -> list[tuple[int, int]]:
    spans = []
    start = 0
    while start < total_rows:
        spans.append((start, min(start + chunk_rows, total_rows)))
        start += chunk_rows
    return spans


def build_chunk_plan(
    row_range: tuple[int, int],
    bias: np.ndarray,
    cmax: np.ndarray,
    alpha: int,
    num_groups: int,
    bits: int,
) -> ChunkPlan:
    tmax = float(cmax.max())
    ladder = build_ladder(tmax, alpha, num_groups, bits)
    group_of = np.array([classify_channel(c, ladder) for c in cmax], dtype=np.int64)
    permutation = np.argsort(group_of, kind="stable").astype(np.int64)
    counts = np.bincount(group_of, minlength=num_groups + 1)[1:]
    boundaries = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return ChunkPlan(row_range, bias, cmax, ladder, group_of, permutation, boundaries)


def build_plan(
    samples: list[FloatMatrix],
    bits: int = 8,
    alpha: int = 2,
    num_groups: int = 8,
    chunk_rows: int = DEFAULT_CHUNK_ROWS,
) -> DecompositionPlan:
    """Calibrate a decomposition plan from one or more activation samples.

    Each row chunk is calibrated independently: bias from the global per
    channel min/max over every sample row falling into the chunk, cmax from
    the bias-subtracted values, then the ladder and group assignment.
    """
    if not samples:
        raise ValueError("at least one calibration sample required")
    if chunk_rows < 1:
        raise ValueError("chunk_rows must be positive")
    cols = samples[0].cols
    if any(s.cols != cols for s in samples):
        raise ShapeError("calibration samples must share the channel dimension")
    total_rows = max(s.rows for s in samples)
    chunks = []
    for start, stop in _chunk_spans(total_rows, chunk_rows):
        slices = [s.data[start : min(stop, s.rows)] for s in samples if s.rows > start]
        stacked = np.concatenate(slices, axis=0)
        bias = (stacked.max(axis=0) + stacked.min(axis=0)) / 2.0
        cmax = np.abs(stacked - bias).max(axis=0)
        chunks.append(
            build_chunk_plan((start, stop), bias, cmax, alpha, num_groups, bits)
        )
    return DecompositionPlan(cols, chunk_rows, tuple(chunks), bits, alpha, num_groups)


def quantize_activation(x: FloatMatrix, plan: DecompositionPlan) -> QuantizedActivation:
    """Subtract the chunk bias and quantize each channel with its group scale."""
    if x.cols != plan.cols:
        raise ShapeError(f"activation has {x.cols} channels, plan expects {plan.cols}")
    limit = int_limit(plan.bit_width)
    out = np.empty(x.shape, dtype=np.int64)
    for start, stop, ci in plan.apply_ranges(x.rows):
        chunk = plan.chunks[ci]
        centered = x.data[start:stop] - chunk.bias[None, :]
        q = round_half_away(centered / chunk.channel_scales()[None, :])
        out[start:stop] = np.clip(q, -limit, limit).astype(np.int64)
    return QuantizedActivation(IntMatrix(out, plan.bit_width), plan)


def quantize_weight(w: FloatMatrix, bits: int) -> QuantizedWeight:
    """Symmetric per-column weight quantization."""
    if bits not in QUANT_BIT_WIDTHS:
        raise ValueError(f"bit width must be one of {QUANT_BIT_WIDTHS}")
    limit = int_limit(bits)
    absmax = np.abs(w.data).max(axis=0)
    scales = np.maximum(absmax / limit, np.finfo(np.float64).tiny)
    scales = np.where(absmax == 0.0, 1.0, scales)
    q = np.clip(round_half_away(w.data / scales[None, :]), -limit, limit)
    return QuantizedWeight(IntMatrix(q.astype(np.int64), bits), scales)


def bias_correction(plan: DecompositionPlan, w: FloatMatrix) -> list[FloatMatrix]:
    """Per-chunk row vectors bias . W, broadcast-added to the chunk's outputs."""
    if w.rows != plan.cols:
        raise ShapeError(f"weight has {w.rows} rows, plan expects {plan.cols} channels")
    return [FloatMatrix((c.bias @ w.data)[None, :]) for c in plan.chunks]
