"""Plain-text and CSV report rendering for the CLI."""

from __future__ import annotations

import csv
import io

import numpy as np

from .simulator import SimReport

SWEEP_HEADER = ["G", "mse", "sqnr", "cycles_implicit", "cycles_explicit"]
TRACE_HEADER = ["cycle", "pe_row", "pe_col", "event"]
GEMM_CSV_HEADER = ["path", "mse", "max_abs_err", "sqnr_db", "total_cycles", "bubble_cycles"]


def fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def render_text(sections: list[tuple[str | None, dict]]) -> str:
    """Sections of key: value lines; a None title renders no header."""
    lines: list[str] = []
    for title, fields in sections:
        if title is not None:
            lines.append(f"[{title}]")
        for key, value in fields.items():
            lines.append(f"{key}: {fmt(value)}")
        lines.append("")
    return "\n".join(lines).rstrip("\n") + "\n"


def sim_report_fields(report: SimReport) -> dict:
    events = report.rescale_events_per_pe
    return {
        "total_cycles": report.total_cycles,
        "bubble_cycles": report.bubble_cycles,
        "tile_passes": report.tile_passes,
        "utilization": report.utilization,
        "rescale_events_total": int(events.sum()),
        "overflow": report.overflow_flag,
        "array": f"{report.config.pe_rows}x{report.config.pe_cols}",
        "pe_bits": report.config.pe_bits,
        "acc_bits": report.config.acc_bits,
        "int8_grouping": report.config.int8_grouping,
        "timing_model": "fill=(rows-1)+(cols-1), stream=K+G-1, drain=one column/cycle",
    }


def write_csv(rows: list[list], header: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_trace_csv(trace: list[tuple[int, int, int]]) -> str:
    return write_csv([[c, r, col, "rescale"] for c, r, col in trace], TRACE_HEADER)
