"""Forward and backward passes for every layer kind the network uses.

All functions are pure: they return new arrays plus whatever cache the
matching backward pass needs. Convolutions are valid (unpadded)
cross-correlations; weights are laid out ``(kh, kw, c_in, c_out)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ShapeError
from .tensor import Tensor4, check


@dataclass
class ConvLayer:
    weights: np.ndarray  # (kh, kw, c_in, c_out)
    bias: np.ndarray  # (c_out,)
    stride: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if self.weights.ndim != 4:
            raise ShapeError(f"conv weights must be rank 4, got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[3],):
            raise ShapeError(f"bias {self.bias.shape} does not match c_out={self.weights.shape[3]}")
        sh, sw = self.stride
        if sh < 1 or sw < 1:
            raise ShapeError(f"strides must be >= 1, got {self.stride}")
        self.stride = (int(sh), int(sw))

    @property
    def kernel(self) -> tuple[int, int]:
        return self.weights.shape[0], self.weights.shape[1]

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        sh, sw = self.stride
        if h < kh or w < kw:
            raise ShapeError(f"input extent {(h, w)} smaller than filter {(kh, kw)}")
        return (h - kh) // sh + 1, (w - kw) // sw + 1


@dataclass
class DenseLayer:
    weights: np.ndarray  # (in_features, out_features)
    bias: np.ndarray  # (out_features,)

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(
                f"dense weights {self.weights.shape} / bias {self.bias.shape} are inconsistent"
            )


@dataclass
class DropoutSpec:
    rate: float
    mode: str = "train"
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {self.mode!r}")


# -- convolution ------------------------------------------------------------

def _patches(x: Tensor4, layer: ConvLayer):
    """Strided patch matrix ``(n, oh, ow, kh*kw*c_in)`` matching the weight layout."""
    kh, kw = layer.kernel
    sh, sw = layer.stride
    oh, ow = layer.output_hw(x.shape[2], x.shape[3])
    nhwc = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    win = sliding_window_view(nhwc, (kh, kw), axis=(1, 2))  # (n, H', W', c, kh, kw)
    win = win[:, : (oh - 1) * sh + 1 : sh, : (ow - 1) * sw + 1 : sw]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(x.shape[0], oh, ow, -1), oh, ow


def conv_forward(x: Tensor4, layer: ConvLayer):
    check(x)
    kh, kw, c_in, c_out = layer.weights.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, layer expects {c_in}")
    cols, oh, ow = _patches(x, layer)
    y = cols.reshape(-1, kh * kw * c_in) @ layer.weights.reshape(-1, c_out)
    y += layer.bias
    y = y.reshape(x.shape[0], oh, ow, c_out).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), (x.shape, cols)


def conv_backward(grad_y: Tensor4, cache, layer: ConvLayer, input_grad: bool = True):
    """Gradients w.r.t. input, weights and bias.

    With ``input_grad=False`` the input gradient is skipped and returned as None.
    """
    x_shape, cols = cache
    n, c_in, h, w = x_shape
    kh, kw, _, c_out = layer.weights.shape
    sh, sw = layer.stride
    oh, ow = cols.shape[1:3]
    if grad_y.shape != (n, c_out, oh, ow):
        raise ShapeError(f"grad_y {grad_y.shape} does not match output {(n, c_out, oh, ow)}")

    gy = np.ascontiguousarray(grad_y.transpose(0, 2, 3, 1)).reshape(-1, c_out)
    grad_b = gy.sum(axis=0)
    grad_w = (cols.reshape(-1, kh * kw * c_in).T @ gy).reshape(layer.weights.shape)
    if not input_grad:
        return None, grad_w, grad_b

    gcols = (gy @ layer.weights.reshape(-1, c_out).T).reshape(n, oh, ow, kh, kw, c_in)
    gx = np.zeros((n, h, w, c_in), dtype=grad_y.dtype)
    for a in range(kh):
        for b in range(kw):
            gx[:, a : a + (oh - 1) * sh + 1 : sh, b : b + (ow - 1) * sw + 1 : sw] += gcols[:, :, :, a, b]
    return np.ascontiguousarray(gx.transpose(0, 3, 1, 2)), grad_w, grad_b


# -- activations and pooling -----------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(grad_y, cache):
    return grad_y * (cache > 0)


def maxpool_forward(x: Tensor4, window=(1, 2), stride=(1, 2)):
    """Max pooling along the width axis; a trailing odd column is dropped."""
    check(x)
    if tuple(window) != (1, 2) or tuple(stride) != (1, 2):
        raise ShapeError("only (1, 2) windows with (1, 2) strides are supported")
    w = x.shape[3]
    if w < 2:
        raise ShapeError(f"width {w} too small for pooling")
    ow = w // 2
    left, right = x[..., 0 : 2 * ow : 2], x[..., 1 : 2 * ow : 2]
    # strict comparison: ties go to the earlier (left) column
    take_right = right > left
    return np.where(take_right, right, left), (x.shape, take_right)


def maxpool_backward(grad_y, cache):
    shape, take_right = cache
    ow = take_right.shape[-1]
    grad_x = np.zeros(shape, dtype=grad_y.dtype)
    grad_x[..., 0 : 2 * ow : 2] = np.where(take_right, 0, grad_y)
    grad_x[..., 1 : 2 * ow : 2] = np.where(take_right, grad_y, 0)
    return grad_x


def gap_forward(x: Tensor4):
    check(x)
    return x.mean(axis=(2, 3), keepdims=True), x.shape


def gap_backward(grad_y, cache):
    n, c, h, w = cache
    return np.broadcast_to(grad_y / (h * w), cache).copy()


def dropout_forward(x, spec: DropoutSpec):
    """Inverted dropout. Eval mode (or rate 0) is the identity and never touches the rng."""
    if spec.mode == "eval" or spec.rate == 0.0:
        return x, None
    if spec.rng is None:
        raise ValueError("train-mode dropout needs an explicit rng")
    keep = 1.0 - spec.rate
    mask = (spec.rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
    return x * mask, mask


def dropout_backward(grad_y, mask):
    if mask is None:
        return grad_y
    return grad_y * mask


# -- classifier ---------------------------------------------------------------

def dense_forward(x, layer: DenseLayer):
    x2 = x.reshape(x.shape[0], -1)
    if x2.shape[1] != layer.weights.shape[0]:
        raise ShapeError(f"{x2.shape[1]} input features, layer expects {layer.weights.shape[0]}")
    return x2 @ layer.weights + layer.bias, (x.shape, x2)


def dense_backward(grad_y, cache, layer: DenseLayer):
    in_shape, x2 = cache
    grad_w = x2.T @ grad_y
    grad_b = grad_y.sum(axis=0)
    grad_x = (grad_y @ layer.weights.T).reshape(in_shape)
    return grad_x, grad_w, grad_b


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, one_hot):
    """Mean categorical cross-entropy. Returns ``(loss, probs, grad_logits)``."""
    if logits.shape != one_hot.shape:
        raise ShapeError(f"logits {logits.shape} vs labels {one_hot.shape}")
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    probs = np.exp(log_probs)
    loss = float(-(one_hot * log_probs).sum() / n)
    grad = (probs - one_hot) / n
    return loss, probs, grad
