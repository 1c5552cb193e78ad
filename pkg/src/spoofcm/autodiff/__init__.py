"""Self-contained reverse-mode autodiff core on numpy."""

from .tensor import (
    SELU_ALPHA,
    SELU_SCALE,
    Tensor,
    ZeroNormError,
    concat,
    default_dtype,
    default_dtype_scope,
    index_select,
    is_grad_enabled,
    log_softmax,
    no_grad,
    normalize,
    ones,
    randn,
    set_default_dtype,
    softmax,
    softplus,
    stack,
    take_rows,
    tensor,
    zeros,
)
from .ops import adaptive_avg_pool2d, conv1d, conv2d, maxpool2d
from .module import GRU, Conv2d, Linear, Module, ModuleList, Parameter, lecun_normal
from .batchnorm import BANKS, DualBatchNorm, bn_fingerprint, set_bn_bank, set_bn_update
from .optim import Adam, cosine_lr
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import (
    ALL_OPS,
    KinkError,
    check_fn,
    check_op,
    check_params,
    directional_check,
    max_rel_err,
    numeric_grad,
)

__all__ = [
    "SELU_ALPHA", "SELU_SCALE", "Tensor", "ZeroNormError", "concat",
    "default_dtype", "default_dtype_scope", "index_select", "is_grad_enabled",
    "log_softmax",
    "no_grad", "normalize", "ones", "randn", "set_default_dtype", "softmax",
    "softplus", "stack", "take_rows", "tensor", "zeros",
    "adaptive_avg_pool2d", "conv1d", "conv2d", "maxpool2d",
    "GRU", "Conv2d", "Linear", "Module", "ModuleList", "Parameter", "lecun_normal",
    "BANKS", "DualBatchNorm", "bn_fingerprint", "set_bn_bank", "set_bn_update",
    "Adam", "cosine_lr",
    "load_checkpoint", "save_checkpoint",
    "ALL_OPS", "KinkError", "check_fn", "check_op", "check_params",
    "directional_check", "max_rel_err", "numeric_grad",
]
