"""Desk-scale Transformer block with quantized matrix multiplications.

Attention and feed-forward weight matmuls (and optionally the two
activation-activation matmuls, one plan per head) route through the
quantized GEMM paths; softmax, LayerNorm, ReLU, residual adds, and the
attention score scaling stay in float, as a vector unit would run them.
LayerNorm is applied pre-sublayer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibrate import (
    bias_correction,
    build_plan,
    quantize_activation,
    quantize_weight,
)
from .errors import ShapeError
from .qgemm import gemm_explicit, gemm_implicit
from .simulator import SimConfig, simulate_gemm
from .tensor import FloatMatrix, error_metrics, matmul_float

LN_EPS = 1e-5


@dataclass(frozen=True)
class BlockWeights:
    w_q: FloatMatrix
    w_k: FloatMatrix
    w_v: FloatMatrix
    w_o: FloatMatrix
    w_fc1: FloatMatrix
    w_fc2: FloatMatrix
    ln1_gain: np.ndarray
    ln1_offset: np.ndarray
    ln2_gain: np.ndarray
    ln2_offset: np.ndarray
    num_heads: int
    seed: int

    @property
    def d_model(self) -> int:
        return self.w_q.rows

    @property
    def d_head(self) -> int:
        return self.d_model // self.num_heads


@dataclass(frozen=True)
class OutlierSpec:
    """Synthetic outlier injection: a fixed channel subset scaled up."""

    fraction: float = 0.02
    magnitude: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.fraction < 1.0:
            raise ValueError("outlier fraction must be in [0, 1)")
        if self.magnitude < 1.0:
            raise ValueError("outlier magnitude must be >= 1")


@dataclass(frozen=True)
class QuantForwardConfig:
    bits: int = 8
    alpha: int = 2
    num_groups: int = 8
    chunk_rows: int = 256
    quantize_act_act: bool = False
    path: str = "implicit"
    acc_bits: int = 32
    sim: SimConfig = SimConfig()

    def __post_init__(self):
        if self.path not in ("explicit", "implicit", "sim"):
            raise ValueError(f"unknown path {self.path!r}")


def init_block(d_model: int, h_ff: int, num_heads: int, seed: int = 0) -> BlockWeights:
    """Gaussian-initialized block weights, deterministic per seed."""
    if d_model < 1 or h_ff < 1 or num_heads < 1:
        raise ValueError("dimensions must be positive")
    if d_model % num_heads != 0:
        raise ValueError(f"d_model {d_model} not divisible by {num_heads} heads")
    rng = np.random.default_rng(seed)

    def gauss(r, c):
        return FloatMatrix(rng.normal(0.0, 0.02, size=(r, c)))

    return BlockWeights(
        w_q=gauss(d_model, d_model),
        w_k=gauss(d_model, d_model),
        w_v=gauss(d_model, d_model),
        w_o=gauss(d_model, d_model),
        w_fc1=gauss(d_model, h_ff),
        w_fc2=gauss(h_ff, d_model),
        ln1_gain=np.ones(d_model),
        ln1_offset=np.zeros(d_model),
        ln2_gain=np.ones(d_model),
        ln2_offset=np.zeros(d_model),
        num_heads=num_heads,
        seed=seed,
    )


def make_input(
    n_tokens: int, d_model: int, outliers: OutlierSpec | None = None, seed: int = 0
) -> FloatMatrix:
    """Gaussian activations, optionally with fixed outlier channels scaled up."""
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 1.0, size=(n_tokens, d_model))
    if outliers is not None and outliers.fraction > 0.0:
        count = int(round(outliers.fraction * d_model))
        count = min(count, d_model - 1)
        if count > 0:
            chan_rng = np.random.default_rng(outliers.seed)
            channels = chan_rng.choice(d_model, size=count, replace=False)
            x[:, channels] *= outliers.magnitude
    return FloatMatrix(x)


def _layer_norm(x: np.ndarray, gain: np.ndarray, offset: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + LN_EPS) * gain[None, :] + offset[None, :]


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward_float(x: FloatMatrix, w: BlockWeights) -> FloatMatrix:
    """Reference block forward pass, float64 throughout."""
    if x.cols != w.d_model:
        raise ShapeError(f"input has {x.cols} features, block expects {w.d_model}")
    h1 = _layer_norm(x.data, w.ln1_gain, w.ln1_offset)
    q = h1 @ w.w_q.data
    k = h1 @ w.w_k.data
    v = h1 @ w.w_v.data
    ctx = np.empty_like(q)
    dh = w.d_head
    for h in range(w.num_heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = (q[:, sl] @ k[:, sl].T) / np.sqrt(dh)
        ctx[:, sl] = _softmax_rows(scores) @ v[:, sl]
    attn_out = ctx @ w.w_o.data + x.data
    h2 = _layer_norm(attn_out, w.ln2_gain, w.ln2_offset)
    ffn = np.maximum(h2 @ w.w_fc1.data, 0.0) @ w.w_fc2.data + attn_out
    return FloatMatrix(ffn)


def _quant_matmul(
    x: np.ndarray, w: np.ndarray, cfg: QuantForwardConfig, reports: dict, name: str
) -> np.ndarray:
    """One matmul through the selected quantized path, self-calibrated on x."""
    xm = FloatMatrix(x)
    wm = FloatMatrix(w)
    plan = build_plan(
        [xm],
        bits=cfg.bits,
        alpha=cfg.alpha,
        num_groups=cfg.num_groups,
        chunk_rows=cfg.chunk_rows,
    )
    qa = quantize_activation(xm, plan)
    qw = quantize_weight(wm, cfg.bits)
    corr = bias_correction(plan, wm)
    if cfg.path == "explicit":
        out = gemm_explicit(qa, qw, plan, acc_bits=cfg.acc_bits, correction=corr).output
    elif cfg.path == "implicit":
        out = gemm_implicit(qa, qw, plan, acc_bits=cfg.acc_bits, correction=corr).output
    else:
        out = simulate_gemm(qa, qw, plan, cfg.sim, correction=corr).outputs_float
    reports[name] = error_metrics(matmul_float(xm, wm), out)
    return out.data


def forward_quant(
    x: FloatMatrix, w: BlockWeights, cfg: QuantForwardConfig
) -> tuple[FloatMatrix, dict[str, dict[str, float]]]:
    """Block forward pass with quantized matmuls; returns per-matmul metrics."""
    if x.cols != w.d_model:
        raise ShapeError(f"input has {x.cols} features, block expects {w.d_model}")
    reports: dict[str, dict[str, float]] = {}
    h1 = _layer_norm(x.data, w.ln1_gain, w.ln1_offset)
    q = _quant_matmul(h1, w.w_q.data, cfg, reports, "wq")
    k = _quant_matmul(h1, w.w_k.data, cfg, reports, "wk")
    v = _quant_matmul(h1, w.w_v.data, cfg, reports, "wv")
    ctx = np.empty_like(q)
    dh = w.d_head
    for h in range(w.num_heads):
        sl = slice(h * dh, (h + 1) * dh)
        if cfg.quantize_act_act:
            raw = _quant_matmul(q[:, sl], k[:, sl].T, cfg, reports, f"scores.h{h}")
        else:
            raw = q[:, sl] @ k[:, sl].T
        probs = _softmax_rows(raw / np.sqrt(dh))
        if cfg.quantize_act_act:
            ctx[:, sl] = _quant_matmul(probs, v[:, sl], cfg, reports, f"attn.h{h}")
        else:
            ctx[:, sl] = probs @ v[:, sl]
    attn_out = _quant_matmul(ctx, w.w_o.data, cfg, reports, "wo") + x.data
    h2 = _layer_norm(attn_out, w.ln2_gain, w.ln2_offset)
    hidden = np.maximum(_quant_matmul(h2, w.w_fc1.data, cfg, reports, "fc1"), 0.0)
    ffn = _quant_matmul(hidden, w.w_fc2.data, cfg, reports, "fc2") + attn_out
    return FloatMatrix(ffn), reports
