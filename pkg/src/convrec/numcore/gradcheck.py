"""Finite-difference gradient verification.

Numeric derivatives use the five-point stencil
``(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h``: its truncation error is
O(h^4), so a fairly large ``h`` keeps round-off small even for gradient
entries many orders below the largest one.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor, backward


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(1e-8, np.abs(a) + np.abs(n))
    return float(np.max(np.abs(a - n) / denom))


def _stencil(f: Callable[[float], float], eps: float) -> float:
    return (8.0 * (f(eps) - f(-eps)) - (f(2 * eps) - f(-2 * eps))) / (12.0 * eps)


def grad_check(function: Callable[[Tensor], Tensor], point, eps: float = 1e-4) -> float:
    """Max relative error between tape gradients and central differences.

    ``function`` maps a float64 tensor shaped like ``point`` to a scalar tensor.
    """
    x0 = np.array(point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    with Tape() as tape:
        y = function(x)
    analytic = backward(tape, y)[x]
    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    for i in range(flat.size):

        def shifted(d, i=i):
            x = flat.copy()
            x[i] += d
            return function(Tensor(x.reshape(x0.shape))).item()

        numeric.reshape(-1)[i] = _stencil(shifted, eps)
    return relative_error(analytic, numeric)


def grad_check_params(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Like :func:`grad_check` but perturbs existing parameter tensors in place.

    With ``max_coords``, each parameter is probed at a random subset of that
    many coordinates (all of them when smaller).
    """
    with Tape() as tape:
        loss = loss_fn()
    grads = backward(tape, loss)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name, p in params.items():
        analytic = grads.get(p, np.zeros_like(p.data)).reshape(-1)
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        numeric = np.empty(len(coords))
        for j, i in enumerate(coords):
            orig = flat[i]

            def shifted(d):
                flat[i] = orig + d
                return loss_fn().item()

            try:
                numeric[j] = _stencil(shifted, eps)
            finally:
                flat[i] = orig
        worst = max(worst, relative_error(analytic[coords], numeric))
    return worst
