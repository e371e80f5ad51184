"""From-scratch tensor/autodiff engine used by every model variant."""

from . import kernels
from .gradcheck import GradCheckReport, grad_check
from .tensor import (
    AutodiffError,
    ContractError,
    Graph,
    NumericError,
    ShapeError,
    StateError,
    Tensor,
    add,
    add_bias,
    add_const,
    add_mat,
    concat_cols,
    concat_rows,
    dropout,
    gather_rows,
    gelu,
    layer_norm,
    logsigmoid,
    masked_softmax,
    matmul,
    merge_heads,
    mul,
    neg,
    parameter,
    relu,
    reshape,
    scale,
    slice_cols,
    split_heads,
    sub,
    sum_all,
    sum_axis,
    transpose_last2,
)

__all__ = [
    "AutodiffError",
    "ContractError",
    "Graph",
    "GradCheckReport",
    "NumericError",
    "ShapeError",
    "StateError",
    "Tensor",
    "add",
    "add_bias",
    "add_const",
    "add_mat",
    "concat_cols",
    "concat_rows",
    "dropout",
    "gather_rows",
    "gelu",
    "grad_check",
    "kernels",
    "layer_norm",
    "logsigmoid",
    "masked_softmax",
    "matmul",
    "merge_heads",
    "mul",
    "neg",
    "parameter",
    "relu",
    "reshape",
    "scale",
    "slice_cols",
    "split_heads",
    "sub",
    "sum_all",
    "sum_axis",
    "transpose_last2",
]
