"""Finite-difference verification of the analytic network gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .model import ModelConfig, PerceptionNet, init
from .train import one_hot

TOY_CONFIG = ModelConfig(input_height=6, input_width=32, num_classes=3, conv_channels=(4, 8, 8),
                         filter_width=5, dropout_rate=0.0, precision=64)


@dataclass
class BlockResult:
    name: str
    size: int
    max_rel_error: float
    passed: bool


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def loss_fn(net: PerceptionNet, x, y_onehot):
    logits, caches = net.forward(x, mode="train", rng=np.random.default_rng(0))
    loss, _, grad = L.softmax_xent(logits, y_onehot)
    return loss, grad, caches


def numeric_gradient(f, buf: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to every element of ``buf``."""
    out = np.zeros_like(buf)
    flat, gflat = buf.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        plus = f()
        flat[i] = old - step
        minus = f()
        flat[i] = old
        gflat[i] = (plus - minus) / (2 * step)
    return out


def grad_check(config: ModelConfig = TOY_CONFIG, tolerance: float = 1e-4, seed: int = 0,
               batch: int = 4, step: float = 1e-5, zero_input: bool = False) -> list[BlockResult]:
    """Compare analytic and central-difference gradients for every parameter block.

    Biases are randomised (rather than left at zero) so that no unit sits
    exactly on the ReLU kink.
    """
    if config.precision != 64 or config.dropout_rate != 0.0:
        raise ValueError("grad_check needs a 64-bit config with dropout disabled")
    if batch > 4:
        raise ValueError("grad_check uses at most 4 samples")
    rng = np.random.default_rng(seed)
    net = init(config, seed)
    for name, p in net.parameters().items():
        if name.endswith(".bias"):
            p[...] = rng.uniform(-0.5, 0.5, size=p.shape)
    shape = (batch, 1, config.input_height, config.input_width)
    x = np.zeros(shape) if zero_input else rng.uniform(-1, 1, size=shape)
    y = one_hot(rng.integers(0, config.num_classes, size=batch), config.num_classes, np.float64)

    _, grad_logits, caches = loss_fn(net, x, y)
    analytic = net.backward(grad_logits, caches)

    results = []
    for name, buf in net.parameters().items():
        numeric = numeric_gradient(lambda: loss_fn(net, x, y)[0], buf, step)
        err = float(relative_error(analytic[name], numeric).max())
        results.append(BlockResult(name, buf.size, err, err <= tolerance))
    return results


def format_results(results: list[BlockResult], tolerance: float) -> str:
    lines = []
    for r in results:
        status = "ok  " if r.passed else "FAIL"
        lines.append(f"{status} {r.name:<20} n={r.size:<5d} max_rel_err={r.max_rel_error:.3e} "
                     f"(tol {tolerance:.0e})")
    return "\n".join(lines)
