"""Adadelta with per-buffer accumulators."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError


@dataclass
class AdadeltaState:
    g: dict[str, np.ndarray] = field(default_factory=dict)  # running mean of grad**2
    s: dict[str, np.ndarray] = field(default_factory=dict)  # running mean of update**2
    rho: float = 0.95
    epsilon: float = 1e-8
    lr: float = 1.0
    steps: int = 0


def state_init(params: dict[str, np.ndarray], rho: float = 0.95, epsilon: float = 1e-8,
               lr: float = 1.0) -> AdadeltaState:
    return AdadeltaState(
        g={k: np.zeros_like(v) for k, v in params.items()},
        s={k: np.zeros_like(v) for k, v in params.items()},
        rho=rho, epsilon=epsilon, lr=lr,
    )


def step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdadeltaState) -> None:
    """Update ``params`` and ``state`` in place.

    For each buffer::

        g     = (1 - rho) * grad**2 + rho * g
        delta = -lr * sqrt(s + eps) / sqrt(g + eps) * grad
        s     = (1 - rho) * delta**2 + rho * s
        param = param + delta

    All gradients are validated before anything is touched, so a
    non-finite gradient leaves both parameters and state unchanged.
    """
    if set(grads) != set(params) or set(state.g) != set(params):
        raise ShapeError("params, grads and optimizer state must share the same buffer names")
    for name, grad in grads.items():
        if grad.shape != params[name].shape or state.g[name].shape != grad.shape:
            raise ShapeError(f"{name}: gradient {grad.shape} vs parameter {params[name].shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient in {name}")

    rho, eps = state.rho, state.epsilon
    for name, param in params.items():
        grad = grads[name]
        g, s = state.g[name], state.s[name]
        g *= rho
        g += (1.0 - rho) * grad * grad
        delta = -state.lr * np.sqrt(s + eps) / np.sqrt(g + eps) * grad
        s *= rho
        s += (1.0 - rho) * delta * delta
        param += delta.astype(param.dtype, copy=False)
    state.steps += 1
