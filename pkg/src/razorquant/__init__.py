"""razorquant: mixed-precision group quantization with distillation tooling.

The pieces compose bottom-up: quantize rows under an allocation plan,
pack the codes into byte payloads, multiply packed operands with exact
integer group dots, and recover accuracy with a small distillation
trainer whose losses adapt per layer and per token.
"""

from .allocation import (
    FOUR_BITS,
    TERNARY_BITS,
    AllocationPlan,
    AllocationScheme,
    build_plan,
    effective_bitwidth,
    load_plan,
    save_plan,
)
from .discrepancy import (
    AnalysisReport,
    KhBound,
    alignment,
    allocation_points,
    analyze_plan,
    default_salience,
    kh_bound,
    roundtrip_error_pair,
    star_discrepancy,
    surrogate_loss,
    total_variation,
)
from .errors import FormatError, RazorquantError, ValidationError
from .features import (
    FeatureStack,
    adaptive_feature_loss,
    layer_cosine_scores,
    layer_frequency_analysis,
    select_layers,
)
from .gemm import fake_quant_forward, mp_matmul, reference_matmul, ste_backward
from .logits import (
    PROB_FLOOR,
    KldConfig,
    LogitBatch,
    cakld_loss,
    eakld_grad,
    eakld_loss,
    forward_kld,
    mismatch_rate,
    mixing_lambda,
    reverse_kld,
    token_entropy,
)
from .manifest import LayerRole, LayerSpec, ModelManifest, load_manifest
from .model import (
    ForwardCache,
    QuantSetup,
    ToyModel,
    ToyModelConfig,
    backward,
    build_quant_setup,
    forward,
)
from .packing import (
    CompressionPolicy,
    CompressionReport,
    LayerCompression,
    PackedBlob,
    PackFormat,
    compression_report,
    load_blob,
    pack,
    packed_row_bytes,
    save_blob,
    unpack,
)
from .quantize import (
    BitMode,
    GroupQuantConfig,
    QuantizedGroupMatrix,
    dequantize_group,
    dequantize_matrix,
    fake_quantize,
    fake_quantize_activations,
    mode_from_label,
    quantize_activations,
    quantize_group,
    quantize_matrix,
    quantize_rows,
    quantize_uniform,
    round_half_away,
)
from .rng import SeededRng, splitmix64_reference
from .tensorio import load_matrix, load_tensor, save_tensor
from .training import (
    AdamW,
    CopyTask,
    TrainerConfig,
    cross_entropy,
    pretrain_teacher,
    run_qad,
    save_history_csv,
    token_accuracy,
    total_loss,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "AllocationPlan",
    "AllocationScheme",
    "AnalysisReport",
    "BitMode",
    "CompressionPolicy",
    "CompressionReport",
    "CopyTask",
    "FOUR_BITS",
    "FeatureStack",
    "ForwardCache",
    "FormatError",
    "GroupQuantConfig",
    "KhBound",
    "KldConfig",
    "LayerCompression",
    "LayerRole",
    "LayerSpec",
    "LogitBatch",
    "ModelManifest",
    "PROB_FLOOR",
    "PackFormat",
    "PackedBlob",
    "QuantSetup",
    "QuantizedGroupMatrix",
    "RazorquantError",
    "SeededRng",
    "TERNARY_BITS",
    "ToyModel",
    "ToyModelConfig",
    "TrainerConfig",
    "ValidationError",
    "adaptive_feature_loss",
    "alignment",
    "allocation_points",
    "analyze_plan",
    "backward",
    "build_plan",
    "build_quant_setup",
    "cakld_loss",
    "compression_report",
    "cross_entropy",
    "default_salience",
    "dequantize_group",
    "dequantize_matrix",
    "eakld_grad",
    "eakld_loss",
    "effective_bitwidth",
    "fake_quant_forward",
    "fake_quantize",
    "fake_quantize_activations",
    "forward",
    "forward_kld",
    "kh_bound",
    "layer_cosine_scores",
    "layer_frequency_analysis",
    "load_blob",
    "load_manifest",
    "load_matrix",
    "load_plan",
    "load_tensor",
    "mismatch_rate",
    "mixing_lambda",
    "mode_from_label",
    "mp_matmul",
    "pack",
    "packed_row_bytes",
    "pretrain_teacher",
    "quantize_activations",
    "quantize_group",
    "quantize_matrix",
    "quantize_rows",
    "quantize_uniform",
    "reference_matmul",
    "reverse_kld",
    "roundtrip_error_pair",
    "round_half_away",
    "run_qad",
    "save_blob",
    "save_history_csv",
    "save_plan",
    "save_tensor",
    "select_layers",
    "splitmix64_reference",
    "star_discrepancy",
    "ste_backward",
    "surrogate_loss",
    "token_accuracy",
    "token_entropy",
    "total_loss",
    "total_variation",
    "train_step",
    "unpack",
]
