"""Minimal float64 reverse-mode autodiff with the layers the forecasting models need."""
from .gradcheck import grad_check
from .layers import (
    CausalConv1d,
    Dense,
    GRUCell,
    LayerNorm,
    LSTMCell,
    Module,
    MultiHeadAttention,
    causal_conv1d,
    dense,
    dropout,
    gru_cell,
    leaky_relu,
    lstm_cell,
    masked_mse,
    scaled_dot_attention,
)
from .optim import AMSGrad, ParameterStore, amsgrad_step
from .tensor import Parameter, Tensor, as_tensor, no_grad

__all__ = [
    "AMSGrad", "CausalConv1d", "Dense", "GRUCell", "LSTMCell", "LayerNorm", "Module",
    "MultiHeadAttention", "Parameter", "ParameterStore", "Tensor", "amsgrad_step", "as_tensor",
    "causal_conv1d", "dense", "dropout", "grad_check", "gru_cell", "leaky_relu", "lstm_cell",
    "masked_mse", "no_grad", "scaled_dot_attention",
]
