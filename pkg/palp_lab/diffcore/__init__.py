from palp_lab.diffcore.autograd import grad
from palp_lab.diffcore.errors import GradientError, NonFiniteError
from palp_lab.diffcore.functions import (
    Function,
    add,
    affine,
    bag_mean,
    concat,
    dot,
    matmul,
    mse,
    mul,
    reshape,
    scale,
    silu,
    sub,
    time_features,
    tsum,
)
from palp_lab.diffcore.gradcheck import check_grad, fd_grad
from palp_lab.diffcore.tensor import Tape, Tensor, as_tensor

__all__ = [
    "Function", "GradientError", "NonFiniteError", "Tape", "Tensor",
    "add", "affine", "as_tensor", "bag_mean", "check_grad", "concat", "dot", "fd_grad",
    "grad", "matmul", "mse", "mul", "reshape", "scale", "silu", "sub", "time_features", "tsum",
]
