"""Layer primitives built on the tape: affine maps, MLPs, a GRU cell and
multi-head self-attention.

Parameters live in plain dicts (or lists of dicts) of :class:`Tensor` so they
can be flattened, copied and serialized without any module machinery.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    masked_fill,
    matmul,
    relu,
    reshape,
    sigmoid,
    softmax,
    tanh,
    transpose,
)

Params = dict  # name -> Tensor


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape, dtype=np.float64) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def init_affine(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64) -> Params:
    return {
        "W": uniform_fan_in(rng, fan_in, (fan_in, fan_out), dtype),
        "b": Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True),
    }


def affine(x: Tensor, p: Params) -> Tensor:
    return x @ p["W"] + p["b"]


def init_mlp(rng: np.random.Generator, sizes: Sequence[int], dtype=np.float64) -> list[Params]:
    """Layer list for ``sizes = [in, hidden..., out]``."""
    if len(sizes) < 2:
        raise ValueError("an MLP needs at least input and output sizes")
    return [init_affine(rng, a, b, dtype) for a, b in zip(sizes[:-1], sizes[1:])]


def mlp(x: Tensor, layers: Sequence[Params]) -> Tensor:
    """Affine layers with ReLU in between; the last layer stays linear."""
    if not layers:
        raise ValueError("empty layer spec")
    for i, layer in enumerate(layers):
        if x.shape[-1] != layer["W"].shape[0]:
            raise ShapeError(f"mlp layer {i}: input width {x.shape[-1]} != {layer['W'].shape[0]}")
        x = affine(x, layer)
        if i < len(layers) - 1:
            x = relu(x)
    return x


def init_gru(rng: np.random.Generator, input_size: int, hidden_size: int, dtype=np.float64) -> Params:
    # Gate blocks are stacked as [reset | update | candidate].
    return {
        "W_x": uniform_fan_in(rng, input_size, (input_size, 3 * hidden_size), dtype),
        "W_h": uniform_fan_in(rng, hidden_size, (hidden_size, 3 * hidden_size), dtype),
        "b_x": Tensor(np.zeros(3 * hidden_size, dtype=dtype), requires_grad=True),
        "b_h": Tensor(np.zeros(3 * hidden_size, dtype=dtype), requires_grad=True),
    }


def gru_cell(h_prev: Tensor, x: Tensor, p: Params) -> Tensor:
    """One GRU update.

    r = sigmoid(x W_xr + h W_hr + b_r), z = sigmoid(x W_xz + h W_hz + b_z),
    n = tanh(x W_xn + b_xn + r * (h W_hn + b_hn)), h' = (1 - z) * n + z * h.
    Works on a single vector or a batch of rows.
    """
    hidden = p["W_h"].shape[0]
    if h_prev.shape[-1] != hidden or x.shape[-1] != p["W_x"].shape[0]:
        raise ShapeError(
            f"gru_cell: got h {h_prev.shape}, x {x.shape} for input {p['W_x'].shape[0]}, hidden {hidden}"
        )
    gx = x @ p["W_x"] + p["b_x"]
    gh = h_prev @ p["W_h"] + p["b_h"]
    r = sigmoid(gx[..., :hidden] + gh[..., :hidden])
    z = sigmoid(gx[..., hidden : 2 * hidden] + gh[..., hidden : 2 * hidden])
    n = tanh(gx[..., 2 * hidden :] + r * gh[..., 2 * hidden :])
    return (1.0 - z) * n + z * h_prev


def init_mhsa(rng: np.random.Generator, dim: int, dtype=np.float64) -> Params:
    p = {}
    for name in ("q", "k", "v", "o"):
        layer = init_affine(rng, dim, dim, dtype)
        p[f"W_{name}"] = layer["W"]
        p[f"b_{name}"] = layer["b"]
    return p


def multi_head_self_attention(X: Tensor, p: Params, heads: int = 1, key_mask=None) -> Tensor:
    """Scaled dot-product self-attention over the rows of ``X``.

    ``X`` is ``(n, d)`` or ``(B, n, d)``. ``key_mask`` (``(n,)`` or ``(B, n)``,
    true = real row) keeps padded rows out of every softmax.
    """
    d = X.shape[-1]
    if heads < 1 or d % heads:
        raise ShapeError(f"model width {d} is not divisible by {heads} heads")
    squeeze = X.ndim == 2
    if squeeze:
        X = reshape(X, (1,) + X.shape)
        if key_mask is not None:
            key_mask = np.asarray(key_mask, dtype=bool)[None]
    B, n, _ = X.shape
    if n == 0:
        out = Tensor(np.zeros((B, 0, d), dtype=X.dtype))
        return reshape(out, (0, d)) if squeeze else out
    dh = d // heads

    def split(t: Tensor) -> Tensor:
        return transpose(reshape(t, (B, n, heads, dh)), (0, 2, 1, 3))

    q = split(X @ p["W_q"] + p["b_q"])
    k = split(X @ p["W_k"] + p["b_k"])
    v = split(X @ p["W_v"] + p["b_v"])
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    if key_mask is not None:
        blocked = ~np.asarray(key_mask, dtype=bool)[:, None, None, :]
        scores = masked_fill(scores, blocked, -1e9)
    att = softmax(scores)
    mixed = reshape(transpose(matmul(att, v), (0, 2, 1, 3)), (B, n, d))
    out = mixed @ p["W_o"] + p["b_o"]
    return reshape(out, (n, d)) if squeeze else out
