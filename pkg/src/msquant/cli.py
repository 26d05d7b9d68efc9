"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 data error, 4 accumulator overflow.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import planio, report, tensorio
from .calibrate import (
    bias_correction,
    build_plan,
    quantize_activation,
    quantize_weight,
)
from .errors import AccumulatorOverflowError, DataFormatError, ShapeError
from .qgemm import gemm_explicit, gemm_implicit, gemm_reference
from .simulator import SimConfig, simulate_explicit, simulate_gemm, trace_rescale_events
from .tensor import FloatMatrix, error_metrics
from .transformer import (
    OutlierSpec,
    QuantForwardConfig,
    forward_float,
    forward_quant,
    init_block,
    make_input,
)


def _add_quant_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bits", type=int, default=8, help="quantization bit width")
    p.add_argument("--alpha", type=int, default=2, help="scale ratio between groups")
    p.add_argument("--groups", default="8", help="group count (comma list for sweep)")
    p.add_argument("--chunk", type=int, default=256, help="row chunk size")
    p.add_argument("--seed", type=int, default=0, help="RNG seed")
    p.add_argument("--format", choices=("text", "csv"), default="text")


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pe", type=int, default=64, help="systolic array dimension")
    p.add_argument("--pe-bits", type=int, choices=(4, 8), default=4)
    p.add_argument("--acc-bits", type=int, default=32)
    p.add_argument("--trace", metavar="FILE", help="write rescale-event CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msquant",
        description="Outlier-aware integer quantization with shift-based rescaling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_cal = sub.add_parser("calibrate", help="build a decomposition plan from samples")
    p_cal.add_argument("samples", nargs="+", help="calibration tensors (TNSR)")
    p_cal.add_argument("-o", "--out", required=True, help="plan file to write")
    _add_quant_flags(p_cal)
    p_cal.set_defaults(func=cmd_calibrate)

    p_gemm = sub.add_parser("gemm", help="compare quantized GEMM paths on x @ w")
    p_gemm.add_argument("x", help="activation tensor (TNSR)")
    p_gemm.add_argument("w", help="weight tensor (TNSR)")
    p_gemm.add_argument("--plan", help="plan file (default: calibrate on x itself)")
    p_gemm.add_argument(
        "--path", choices=("explicit", "implicit", "sim", "all"), default="all"
    )
    _add_quant_flags(p_gemm)
    _add_sim_flags(p_gemm)
    p_gemm.set_defaults(func=cmd_gemm)

    p_sweep = sub.add_parser("sweep", help="sweep the group count, report error and cycles")
    p_sweep.add_argument("x", help="activation tensor (TNSR)")
    p_sweep.add_argument("w", help="weight tensor (TNSR)")
    p_sweep.add_argument("-o", "--out", help="write the CSV here instead of stdout")
    p_sweep.add_argument("--plot", metavar="FILE", help="render the sweep figure to FILE")
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    _add_quant_flags(p_sweep)
    _add_sim_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_tf = sub.add_parser("transformer", help="run the toy block float vs. quantized")
    p_tf.add_argument("--dmodel", type=int, default=128)
    p_tf.add_argument("--ffn", type=int, default=512)
    p_tf.add_argument("--heads", type=int, default=4)
    p_tf.add_argument("--tokens", type=int, default=256)
    p_tf.add_argument("--outlier-frac", type=float, default=0.0)
    p_tf.add_argument("--outlier-mag", type=float, default=1.0)
    p_tf.add_argument("--outlier-seed", type=int, default=0)
    p_tf.add_argument("--quantize-act-act", action="store_true")
    p_tf.add_argument("--path", choices=("explicit", "implicit", "sim"), default="implicit")
    p_tf.add_argument("--plot", metavar="FILE", help="render per-matmul error bars to FILE")
    _add_quant_flags(p_tf)
    _add_sim_flags(p_tf)
    p_tf.set_defaults(func=cmd_transformer)

    return parser


def _parse_groups(parser, text: str, allow_list: bool) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        parser.error(f"--groups expects integers, got {text!r}")
    if not values or any(v < 1 for v in values):
        parser.error(f"--groups expects positive integers, got {text!r}")
    if not allow_list and len(values) != 1:
        parser.error("--groups takes a single value here")
    return values


def _load_float(path: str) -> FloatMatrix:
    m = tensorio.load(path)
    if not isinstance(m, FloatMatrix):
        raise DataFormatError(f"{path}: expected a float tensor")
    return m


def cmd_calibrate(args, parser) -> int:
    groups = _parse_groups(parser, args.groups, allow_list=False)[0]
    samples = [_load_float(p) for p in args.samples]
    plan = build_plan(
        samples, bits=args.bits, alpha=args.alpha, num_groups=groups, chunk_rows=args.chunk
    )
    planio.dump_plan(plan, args.out)
    sections = [
        (
            "plan",
            {
                "out": args.out,
                "channels": plan.cols,
                "chunks": len(plan.chunks),
                "bits": plan.bit_width,
                "alpha": plan.alpha,
                "groups": plan.num_groups,
                "chunk_rows": plan.chunk_rows,
            },
        )
    ]
    for i, chunk in enumerate(plan.chunks):
        counts = np.diff(chunk.group_boundaries)
        sections.append(
            (
                f"chunk {i}",
                {
                    "rows": f"{chunk.row_range[0]}..{chunk.row_range[1]}",
                    "tmax": chunk.ladder.tmax,
                    "group_sizes": ",".join(str(int(c)) for c in counts),
                },
            )
        )
    sys.stdout.write(report.render_text(sections))
    return 0


def _gemm_paths(args, parser):
    paths = ["explicit", "implicit", "sim"] if args.path == "all" else [args.path]
    if "sim" in paths and args.alpha != 2:
        parser.error("the sim path requires --alpha 2")
    return paths


def cmd_gemm(args, parser) -> int:
    groups = _parse_groups(parser, args.groups, allow_list=False)[0]
    paths = _gemm_paths(args, parser)
    x = _load_float(args.x)
    w = _load_float(args.w)
    if args.plan:
        plan = planio.load_plan(args.plan)
    else:
        plan = build_plan(
            [x], bits=args.bits, alpha=args.alpha, num_groups=groups, chunk_rows=args.chunk
        )
    qa = quantize_activation(x, plan)
    qw = quantize_weight(w, plan.bit_width)
    corr = bias_correction(plan, w)
    ref = gemm_reference(x, w)
    sim_cfg = SimConfig(pe_rows=args.pe, pe_cols=args.pe, pe_bits=args.pe_bits,
                        acc_bits=args.acc_bits)
    sections = []
    rows = []
    for path in paths:
        cycles: dict = {}
        if path == "explicit":
            out = gemm_explicit(qa, qw, plan, acc_bits=args.acc_bits, correction=corr).output
        elif path == "implicit":
            out = gemm_implicit(qa, qw, plan, acc_bits=args.acc_bits, correction=corr).output
        else:
            rep = simulate_gemm(qa, qw, plan, sim_cfg, correction=corr, trace=bool(args.trace))
            out = rep.outputs_float
            cycles = report.sim_report_fields(rep)
            if args.trace:
                Path(args.trace).write_text(
                    report.write_trace_csv(trace_rescale_events(rep)), encoding="utf-8"
                )
        metrics = error_metrics(ref, out)
        sections.append((f"path {path}", {**metrics, **cycles}))
        rows.append(
            [
                path,
                metrics["mse"],
                metrics["max_abs_err"],
                metrics["sqnr_db"],
                cycles.get("total_cycles", ""),
                cycles.get("bubble_cycles", ""),
            ]
        )
    if args.format == "csv":
        sys.stdout.write(report.write_csv(rows, report.GEMM_CSV_HEADER))
    else:
        sys.stdout.write(report.render_text(sections))
    return 0


def _sweep_point(payload) -> list:
    x_data, w_data, bits, alpha, g, chunk, pe, pe_bits, acc_bits = payload
    x = FloatMatrix(x_data)
    w = FloatMatrix(w_data)
    plan = build_plan([x], bits=bits, alpha=alpha, num_groups=g, chunk_rows=chunk)
    qa = quantize_activation(x, plan)
    qw = quantize_weight(w, bits)
    corr = bias_correction(plan, w)
    ref = gemm_reference(x, w)
    out = gemm_implicit(qa, qw, plan, acc_bits=acc_bits, correction=corr).output
    metrics = error_metrics(ref, out)
    cfg = SimConfig(pe_rows=pe, pe_cols=pe, pe_bits=pe_bits, acc_bits=acc_bits)
    cyc_impl = simulate_gemm(qa, qw, plan, cfg, correction=corr).total_cycles
    cyc_expl = simulate_explicit(qa, qw, plan, cfg, correction=corr).total_cycles
    return [g, metrics["mse"], metrics["sqnr_db"], cyc_impl, cyc_expl]


def cmd_sweep(args, parser) -> int:
    groups = _parse_groups(parser, args.groups, allow_list=True)
    if args.alpha != 2:
        parser.error("sweep reports array cycles and requires --alpha 2")
    x = _load_float(args.x)
    w = _load_float(args.w)
    payloads = [
        (x.data, w.data, args.bits, args.alpha, g, args.chunk, args.pe, args.pe_bits,
         args.acc_bits)
        for g in groups
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_point, payloads))
    else:
        rows = [_sweep_point(p) for p in payloads]
    csv_text = report.write_csv(rows, report.SWEEP_HEADER)
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
    if args.format == "text" and not args.out:
        sections = [
            (f"G={row[0]}", dict(zip(report.SWEEP_HEADER[1:], row[1:]))) for row in rows
        ]
        sys.stdout.write(report.render_text(sections))
    elif not args.out:
        sys.stdout.write(csv_text)
    if args.plot:
        from .plots import plot_sweep

        plot_sweep(rows, args.plot)
    return 0


def cmd_transformer(args, parser) -> int:
    groups = _parse_groups(parser, args.groups, allow_list=False)[0]
    if args.path == "sim" and args.alpha != 2:
        parser.error("the sim path requires --alpha 2")
    weights = init_block(args.dmodel, args.ffn, args.heads, seed=args.seed)
    outliers = (
        OutlierSpec(args.outlier_frac, args.outlier_mag, args.outlier_seed)
        if args.outlier_frac > 0.0
        else None
    )
    x = make_input(args.tokens, args.dmodel, outliers, seed=args.seed + 1)
    cfg = QuantForwardConfig(
        bits=args.bits,
        alpha=args.alpha,
        num_groups=groups,
        chunk_rows=args.chunk,
        quantize_act_act=args.quantize_act_act,
        path=args.path,
        acc_bits=args.acc_bits,
        sim=SimConfig(pe_rows=args.pe, pe_cols=args.pe, pe_bits=args.pe_bits,
                      acc_bits=args.acc_bits),
    )
    ref = forward_float(x, weights)
    out, matmul_reports = forward_quant(x, weights, cfg)
    end_to_end = error_metrics(ref, out)
    rows = [
        [name, m["mse"], m["max_abs_err"], m["sqnr_db"]]
        for name, m in matmul_reports.items()
    ]
    rows.append(["end_to_end", end_to_end["mse"], end_to_end["max_abs_err"],
                 end_to_end["sqnr_db"]])
    if args.format == "csv":
        sys.stdout.write(
            report.write_csv(rows, ["matmul", "mse", "max_abs_err", "sqnr_db"])
        )
    else:
        sections = [(f"matmul {name}", m) for name, m in matmul_reports.items()]
        sections.append(("end_to_end", end_to_end))
        sys.stdout.write(report.render_text(sections))
    if args.plot:
        from .plots import plot_matmul_errors

        plot_matmul_errors(matmul_reports, args.plot)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except AccumulatorOverflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (DataFormatError, ShapeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
