"""Matplotlib figures rendered next to the delimited reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def plot_sweep(rows: list[list], path: str | Path) -> None:
    """Error and cycle curves over the group-count sweep.

    ``rows`` are sweep records (G, mse, sqnr, cycles_implicit,
    cycles_explicit), one per group count.
    """
    groups = [r[0] for r in rows]
    mse = [r[1] for r in rows]
    sqnr = [r[2] for r in rows]
    cyc_impl = [r[3] for r in rows]
    cyc_expl = [r[4] for r in rows]

    fig, (ax_err, ax_cyc) = plt.subplots(1, 2, figsize=(9.0, 3.4))

    ax_err.plot(groups, mse, "o-", color="tab:red", label="MSE")
    ax_err.set_xlabel("groups")
    ax_err.set_ylabel("MSE", color="tab:red")
    ax_err.set_yscale("log")
    ax_err.set_xscale("log", base=2)
    ax_sq = ax_err.twinx()
    ax_sq.plot(groups, sqnr, "s--", color="tab:blue", label="SQNR")
    ax_sq.set_ylabel("SQNR [dB]", color="tab:blue")
    ax_err.set_title("quantization error vs. group count")

    ax_cyc.plot(groups, cyc_impl, "o-", label="implicit requantization")
    ax_cyc.plot(groups, cyc_expl, "s--", label="explicit requantization")
    ax_cyc.set_xlabel("groups")
    ax_cyc.set_ylabel("total cycles")
    ax_cyc.set_xscale("log", base=2)
    ax_cyc.legend(fontsize=8)
    ax_cyc.set_title("array cycles vs. group count")

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_matmul_errors(reports: dict[str, dict[str, float]], path: str | Path) -> None:
    """Per-matmul SQNR bars for one quantized transformer forward pass."""
    names = list(reports)
    sqnr = [reports[n]["sqnr_db"] for n in names]

    fig, ax = plt.subplots(figsize=(max(4.0, 0.55 * len(names) + 1.5), 3.2))
    ax.bar(range(len(names)), sqnr, color="tab:blue")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("SQNR [dB]")
    ax.set_title("per-matmul quantization quality")
    ax.grid(axis="y", alpha=0.3)

    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
