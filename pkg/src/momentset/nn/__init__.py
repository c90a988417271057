from .attention import key_mask_bias, multi_head_attention
from .checkpoint import MAGIC, CheckpointError, load_param_arrays, load_params, save_params
from .gradcheck import gradcheck
from .optim import ParamStore, adamw_step, clip_grad_norm, global_grad_norm
from .tensor import (
    Tensor,
    absolute,
    add,
    attention_core,
    concat,
    cross_entropy,
    div,
    dropout,
    layernorm,
    linear,
    log,
    log_softmax,
    matmul,
    maximum,
    minimum,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    sigmoid,
    sinusoidal_pe,
    softmax,
    sub,
    take,
    tmean,
    transpose,
    tsum,
    xavier_init,
)

__all__ = [
    "MAGIC",
    "CheckpointError",
    "ParamStore",
    "Tensor",
    "absolute",
    "adamw_step",
    "add",
    "attention_core",
    "clip_grad_norm",
    "concat",
    "cross_entropy",
    "div",
    "dropout",
    "global_grad_norm",
    "gradcheck",
    "key_mask_bias",
    "layernorm",
    "linear",
    "load_param_arrays",
    "load_params",
    "log",
    "log_softmax",
    "matmul",
    "maximum",
    "minimum",
    "mul",
    "multi_head_attention",
    "neg",
    "no_grad",
    "relu",
    "reshape",
    "save_params",
    "sigmoid",
    "sinusoidal_pe",
    "softmax",
    "sub",
    "take",
    "tmean",
    "transpose",
    "tsum",
    "xavier_init",
]
