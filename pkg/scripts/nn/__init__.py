"""
Differentiable compute core.

Kernels (softmax, layer norm, GRU cell, MLP) are plain functions over torch tensors and a
ParamStore of named parameters; gradient_check verifies reverse-mode gradients against
central finite differences.
"""

from .core import (
    ParamStore,
    softmax,
    masked_softmax,
    layer_norm,
    gru_cell,
    mlp_forward,
    gradient_check,
    check_finite,
    init_linear,
    init_normal,
    init_layer_norm,
    init_mlp,
    init_gru,
)

__all__ = [
    "ParamStore",
    "softmax",
    "masked_softmax",
    "layer_norm",
    "gru_cell",
    "mlp_forward",
    "gradient_check",
    "check_finite",
    "init_linear",
    "init_normal",
    "init_layer_norm",
    "init_mlp",
    "init_gru",
]
