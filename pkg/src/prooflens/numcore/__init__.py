from .checkpoint import (CheckpointError, CheckpointMismatch, CorruptValue, FileMissing,
                         ManifestShapeMismatch, load_store, read_checkpoint, save_store,
                         write_checkpoint)
from .optim import AdamState, KeyMismatch, adam_step, backward, grad_check
from .params import ParamStore, SplitMix64, glorot
from .tensor import (BatchNormState, NonFiniteError, NotAScalar, ShapeMismatch, Tensor, add,
                     as_tensor, batchnorm, concat_rows, dot, gradients, masked_softmax, matmul,
                     mean_all, mean_rows, mul, relu, scale, sigmoid, slice_cols, softmax_nll, spmm,
                     sum_all, sum_rows, take_rows, tanh, transpose)

__all__ = [
    "AdamState", "BatchNormState", "CheckpointError", "CheckpointMismatch", "CorruptValue",
    "FileMissing", "KeyMismatch", "ManifestShapeMismatch", "NonFiniteError", "NotAScalar",
    "ParamStore", "ShapeMismatch", "SplitMix64", "Tensor", "adam_step", "add", "as_tensor",
    "backward", "batchnorm", "concat_rows", "dot", "glorot", "grad_check", "gradients",
    "load_store", "masked_softmax", "matmul", "mean_all", "mean_rows", "mul", "read_checkpoint",
    "relu", "save_store", "scale", "sigmoid", "slice_cols", "softmax_nll", "spmm", "sum_all",
    "sum_rows", "take_rows", "tanh", "transpose", "write_checkpoint",
]
