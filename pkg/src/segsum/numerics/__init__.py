"""Dense tensors, reverse-mode differentiation, Adam, and checking tools."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, ParamCheck, grad_check
from .optim import Adam
from .tensor import (
    Parameter,
    Tensor,
    TensorError,
    add,
    bce_with_logits,
    concat,
    cross_entropy_label_smoothed,
    dropout,
    embedding_lookup,
    gather_rows,
    gelu,
    grad_enabled,
    layer_norm,
    linear,
    log_softmax_np,
    matmul,
    merge_heads,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_masked,
    split_heads,
    sub,
    tensor_mean,
    tensor_sum,
    transpose,
)

__all__ = [
    "Adam",
    "CheckpointError",
    "GradCheckReport",
    "ParamCheck",
    "Parameter",
    "Tensor",
    "TensorError",
    "add",
    "bce_with_logits",
    "concat",
    "cross_entropy_label_smoothed",
    "dropout",
    "embedding_lookup",
    "gather_rows",
    "gelu",
    "grad_check",
    "grad_enabled",
    "layer_norm",
    "linear",
    "load_checkpoint",
    "log_softmax_np",
    "matmul",
    "merge_heads",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "save_checkpoint",
    "scale",
    "sigmoid",
    "softmax_masked",
    "split_heads",
    "sub",
    "tensor_mean",
    "tensor_sum",
    "transpose",
]
