from .gradcheck import GradCheckReport, grad_check, relative_error
from .layers import (MLP, MultiHeadAttention, PositionalEmbedding, TransformerBlock,
                     TransformerConfig, TransformerStack, init_linear, linear_count)
from .optim import AdamState, Schedule, adam_step
from .params import ParamStore

__all__ = [
    "AdamState", "GradCheckReport", "MLP", "MultiHeadAttention", "ParamStore",
    "PositionalEmbedding", "Schedule", "TransformerBlock", "TransformerConfig",
    "TransformerStack", "adam_step", "grad_check", "init_linear", "linear_count",
    "relative_error",
]
