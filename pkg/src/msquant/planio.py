"""Plan document serialization (JSON, UTF-8).

The document carries version, b, alpha, G, chunk_rows and one record per
chunk: {row_range, bias, cmax, tmax, group_of, permutation, boundaries},
arrays in channel order. Serialization is canonical: loading a dumped plan
and dumping it again reproduces the bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .calibrate import ChunkPlan, DecompositionPlan, build_ladder
from .errors import DataFormatError

PLAN_VERSION = 1


def dumps_plan(plan: DecompositionPlan) -> str:
    doc = {
        "version": PLAN_VERSION,
        "b": plan.bit_width,
        "alpha": plan.alpha,
        "G": plan.num_groups,
        "chunk_rows": plan.chunk_rows,
        "chunks": [
            {
                "row_range": list(c.row_range),
                "bias": c.bias.tolist(),
                "cmax": c.cmax.tolist(),
                "tmax": c.ladder.tmax,
                "group_of": c.group_of.tolist(),
                "permutation": c.permutation.tolist(),
                "boundaries": c.group_boundaries.tolist(),
            }
            for c in plan.chunks
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def loads_plan(text: str) -> DecompositionPlan:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"plan document is not valid JSON: {exc}") from exc
    try:
        version = doc["version"]
        if version != PLAN_VERSION:
            raise DataFormatError(f"unsupported plan version {version}")
        bits = int(doc["b"])
        alpha = int(doc["alpha"])
        num_groups = int(doc["G"])
        chunk_rows = int(doc["chunk_rows"])
        chunks = []
        for rec in doc["chunks"]:
            bias = np.asarray(rec["bias"], dtype=np.float64)
            cmax = np.asarray(rec["cmax"], dtype=np.float64)
            tmax = float(rec["tmax"])
            ladder = build_ladder(tmax, alpha, num_groups, bits)
            chunk = ChunkPlan(
                row_range=tuple(int(v) for v in rec["row_range"]),
                bias=bias,
                cmax=cmax,
                ladder=ladder,
                group_of=np.asarray(rec["group_of"], dtype=np.int64),
                permutation=np.asarray(rec["permutation"], dtype=np.int64),
                group_boundaries=np.asarray(rec["boundaries"], dtype=np.int64),
            )
            _validate_chunk(chunk, num_groups)
            chunks.append(chunk)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"malformed plan document: {exc}") from exc
    if not chunks:
        raise DataFormatError("plan document has no chunks")
    cols = chunks[0].cols
    if any(c.cols != cols for c in chunks):
        raise DataFormatError("chunks disagree on the channel count")
    return DecompositionPlan(cols, chunk_rows, tuple(chunks), bits, alpha, num_groups)


def _validate_chunk(chunk: ChunkPlan, num_groups: int) -> None:
    cols = chunk.cols
    if chunk.cmax.size != cols or chunk.group_of.size != cols:
        raise DataFormatError("channel arrays disagree on length")
    if sorted(chunk.permutation.tolist()) != list(range(cols)):
        raise DataFormatError("permutation is not a bijection on the channels")
    if chunk.group_of.min() < 1 or chunk.group_of.max() > num_groups:
        raise DataFormatError("group assignment outside 1..G")
    b = chunk.group_boundaries
    if b.size != num_groups + 1 or b[0] != 0 or b[-1] != cols or np.any(np.diff(b) < 0):
        raise DataFormatError("group boundaries are inconsistent")


def dump_plan(plan: DecompositionPlan, path: str | Path) -> None:
    Path(path).write_text(dumps_plan(plan), encoding="utf-8")


def load_plan(path: str | Path) -> DecompositionPlan:
    return loads_plan(Path(path).read_text(encoding="utf-8"))
