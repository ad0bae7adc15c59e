from .check import GradCheckReport, grad_check
from .optim import Adam, OptimizerStateError
from .params import ParamStore
from .tensor import (
    ShapeError,
    Tensor,
    add,
    as_tensor,
    concat,
    div,
    exp,
    gather,
    getitem,
    matmul,
    maximum0,
    mean,
    mul,
    no_grad,
    norm2,
    record_branch,
    record_branches,
    relu,
    reshape,
    softmax,
    sqrt,
    square,
    sub,
    tabs,
    tsum,
    where,
)

__all__ = [
    "Adam", "GradCheckReport", "OptimizerStateError", "ParamStore", "ShapeError", "Tensor",
    "add", "as_tensor", "concat", "div", "exp", "gather", "getitem", "grad_check", "matmul",
    "maximum0", "mean", "mul", "no_grad", "norm2", "record_branch", "record_branches", "relu",
    "reshape", "softmax", "sqrt", "square", "sub", "tabs", "tsum", "where",
]
