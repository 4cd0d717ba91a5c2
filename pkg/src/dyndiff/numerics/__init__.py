from dyndiff.numerics.functional import (
    add_over_time,
    concat,
    conv1d,
    dense,
    layer_norm,
    matmul,
    mse,
    multi_head_attention,
    relu,
    silu,
    softmax,
)
from dyndiff.numerics.gradcheck import GradCheckReport, NondeterminismError, grad_check
from dyndiff.numerics.optim import Adam, clip_grad_norm, global_grad_norm
from dyndiff.numerics.tensor import (
    NonFiniteError,
    Parameter,
    ShapeError,
    Tensor,
    as_tensor,
    default_dtype,
    float64_mode,
    no_grad,
    precision,
)

__all__ = [
    "Adam", "GradCheckReport", "NonFiniteError", "NondeterminismError", "Parameter",
    "ShapeError", "Tensor", "add_over_time", "as_tensor", "clip_grad_norm", "concat",
    "conv1d", "default_dtype", "dense", "float64_mode", "global_grad_norm", "grad_check",
    "layer_norm", "matmul", "mse", "multi_head_attention", "no_grad", "precision", "relu",
    "silu", "softmax",
]
