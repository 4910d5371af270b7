"""Minimal differentiable numerical core."""

from .gradcheck import grad_check, grad_check_params, relative_error
from .layers import (
    affine,
    gru_cell,
    init_affine,
    init_gru,
    init_mhsa,
    init_mlp,
    mlp,
    multi_head_self_attention,
    uniform_fan_in,
)
from .optim import AdamState, adam_step
from .tensor import (
    PRIMITIVES,
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    apply_primitive,
    backward,
    checked,
    concat,
    exp,
    gather,
    log,
    masked_fill,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    scale,
    set_checked,
    sigmoid,
    softmax,
    sum_,
    tanh,
    transpose,
)

__all__ = [name for name in dir() if not name.startswith("_")]
