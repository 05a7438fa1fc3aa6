"""Dense float64 tensors, reverse-mode differentiation and small-network building blocks."""

from .gaussian import (LOG_VAR_MAX, LOG_VAR_MIN, GaussianHead, gaussian_log_prob, gaussian_nll,
                       kl_diag_gaussians)
from .nn import Lstm, MaskedMlp, Mlp, Module, lstm_sequence, lstm_step, xavier_uniform
from .optim import Adam, AdamState, adam_step
from .tensor import (Tape, Tensor, active_tape, add, as_tensor, clip, concat, custom, div, exp,
                     expm1, grad, index, log, matmul, minimum, mul, neg, power, relu, reshape,
                     set_debug, sigmoid, softplus, sqrt, square, stack, sub, swapaxes, tabs, take,
                     tanh, tmean, transpose, tsum, where)

__all__ = [
    "Tensor", "Tape", "grad", "active_tape", "set_debug", "as_tensor", "custom",
    "add", "sub", "mul", "div", "neg", "power", "square", "sqrt", "exp", "expm1", "log",
    "tanh", "sigmoid", "relu", "softplus", "tabs", "clip", "minimum", "where",
    "tsum", "tmean", "reshape", "transpose", "swapaxes", "index", "take", "concat", "stack", "matmul",
    "GaussianHead", "kl_diag_gaussians", "gaussian_nll", "gaussian_log_prob", "LOG_VAR_MIN", "LOG_VAR_MAX",
    "Module", "Mlp", "MaskedMlp", "Lstm", "lstm_step", "lstm_sequence", "xavier_uniform",
    "Adam", "AdamState", "adam_step",
]
