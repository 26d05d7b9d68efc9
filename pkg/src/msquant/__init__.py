"""Outlier-aware integer quantization with shift-based rescaling.

Activation channels are split into groups whose scale factors sit exact
powers of two apart, so partial sums from the groups merge with integer
shifts instead of float requantization. The package provides the
calibration pipeline, bit-exact GEMM paths, a cycle-level systolic-array
model, a toy Transformer block, and a CLI.
"""

from .calibrate import (
    ChunkPlan,
    DecompositionPlan,
    GroupLadder,
    QuantizedActivation,
    QuantizedWeight,
    bias_correction,
    build_ladder,
    build_plan,
    classify_channel,
    quantize_activation,
    quantize_weight,
)
from .errors import AccumulatorOverflowError, DataFormatError, ShapeError
from .qgemm import (
    GemmResult,
    PathComparison,
    compare_paths,
    gemm_explicit,
    gemm_implicit,
    gemm_reference,
)
from .simulator import (
    SimConfig,
    SimReport,
    StreamSchedule,
    simulate_explicit,
    simulate_gemm,
    trace_rescale_events,
)
from .tensor import (
    PER_COLUMN,
    PER_ROW,
    PER_TENSOR,
    FloatMatrix,
    IntMatrix,
    QuantParams,
    channel_absmax,
    channel_bias,
    dequantize,
    error_metrics,
    matmul_float,
    matmul_int_wide,
    quantize_symmetric,
)
from .transformer import (
    BlockWeights,
    OutlierSpec,
    QuantForwardConfig,
    forward_float,
    forward_quant,
    init_block,
    make_input,
)

__version__ = "0.1.0"
