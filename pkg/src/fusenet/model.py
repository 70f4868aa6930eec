"""The late-fusion HAR network: three convolutions plus a classifier head.

Layers 1 and 2 are 1D convolutions (filter height 1) each followed by
ReLU, width-halving max pooling and dropout. The *fusion* layer uses a
``(3, filter_width)`` filter with vertical stride 3, merging each group of
three stacked sensor rows. By default it is layer 3, followed by ReLU,
global average pooling and dropout; a softmax classifier sits on top.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L
from .errors import ShapeError, UsageError
from .tensor import Tensor4, check, dtype_for


@dataclass(frozen=True)
class ModelConfig:
    input_height: int = 6
    input_width: int = 128
    num_classes: int = 6
    conv_channels: tuple[int, int, int] = (48, 96, 96)
    filter_width: int = 15
    fusion_layer: int = 3
    head: str = "gap"  # "gap" or "dense:<hidden size>"
    dropout_rate: float = 0.4
    precision: int = 32

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        if self.fusion_layer not in (1, 2, 3):
            raise ShapeError(f"fusion_layer must be 1, 2 or 3, got {self.fusion_layer}")
        if len(self.conv_channels) != 3:
            raise ShapeError("conv_channels needs exactly three entries")
        if self.precision not in (32, 64):
            raise ShapeError(f"precision must be 32 or 64, got {self.precision}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ShapeError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        self.hidden_size  # validates head
        # walking the shape pipeline raises on an unworkable geometry
        self.shapes(1)

    @property
    def hidden_size(self) -> int | None:
        if self.head == "gap":
            return None
        kind, _, size = self.head.partition(":")
        if kind != "dense" or not size.isdigit() or int(size) < 1:
            raise ShapeError(f"head must be 'gap' or 'dense:<size>', got {self.head!r}")
        return int(size)

    def conv_geometry(self) -> list[tuple[int, int, int, int, tuple[int, int]]]:
        """Per conv layer: (kh, kw, c_in, c_out, stride)."""
        geo = []
        c_in = 1
        for i, c_out in enumerate(self.conv_channels, start=1):
            if i == self.fusion_layer:
                geo.append((3, self.filter_width, c_in, c_out, (3, 1)))
            else:
                geo.append((1, self.filter_width, c_in, c_out, (1, 1)))
            c_in = c_out
        return geo

    def shapes(self, n: int) -> list[tuple[str, tuple[int, int, int, int]]]:
        """Intermediate activation shapes for a batch of ``n``, in forward order."""
        h, w = self.input_height, self.input_width
        out = []
        for i, (kh, kw, _, c_out, (sh, sw)) in enumerate(self.conv_geometry(), start=1):
            if h < kh or w < kw:
                raise ShapeError(f"conv{i}: input {(h, w)} smaller than filter {(kh, kw)}")
            if kh == 3 and h % 3:
                raise ShapeError(f"conv{i}: height {h} is not divisible by 3")
            h, w = (h - kh) // sh + 1, (w - kw) // sw + 1
            out.append((f"conv{i}", (n, c_out, h, w)))
            if i < 3:
                if w < 2:
                    raise ShapeError(f"pool{i}: width {w} too small")
                w //= 2
                out.append((f"pool{i}", (n, c_out, h, w)))
        c3 = self.conv_channels[2]
        if self.hidden_size is None:
            out.append(("gap", (n, c3, 1, 1)))
        else:
            out.append(("hidden", (n, self.hidden_size)))
        out.append(("logits", (n, self.num_classes)))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)


def he_uniform_bound(n_in: int) -> float:
    return math.sqrt(2.0 / n_in)


@dataclass
class Caches:
    mode: str
    steps: dict = field(default_factory=dict)


class PerceptionNet:
    """Parameter container with whole-network forward and backward passes."""

    def __init__(self, config: ModelConfig, convs: list[L.ConvLayer],
                 classifier: L.DenseLayer, hidden: L.DenseLayer | None = None):
        self.config = config
        self.conv1, self.conv2, self.conv3 = convs
        self.hidden = hidden
        self.classifier = classifier

    @property
    def dtype(self):
        return dtype_for(self.config.precision)

    def parameters(self) -> dict[str, np.ndarray]:
        """Named parameter buffers in a fixed order; arrays are live references."""
        out = {}
        for name in ("conv1", "conv2", "conv3", "hidden", "classifier"):
            layer = getattr(self, name)
            if layer is None:
                continue
            out[f"{name}.weights"] = layer.weights
            out[f"{name}.bias"] = layer.bias
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        own = self.parameters()
        if set(own) != set(params):
            raise ShapeError(f"parameter names differ: {sorted(set(own) ^ set(params))}")
        for name, buf in own.items():
            if params[name].shape != buf.shape:
                raise ShapeError(f"{name}: shape {params[name].shape} != {buf.shape}")
            buf[...] = params[name]

    # -- forward / backward ---------------------------------------------------

    def forward(self, x: Tensor4, mode: str = "eval", rng: np.random.Generator | None = None):
        cfg = self.config
        check(x)
        if x.shape[1:] != (1, cfg.input_height, cfg.input_width):
            raise ShapeError(
                f"input {x.shape} does not match (n, 1, {cfg.input_height}, {cfg.input_width})"
            )
        if mode == "train" and rng is None:
            raise UsageError("train-mode forward needs an rng for dropout")
        x = np.ascontiguousarray(x, dtype=self.dtype)
        drop = L.DropoutSpec(cfg.dropout_rate, mode, rng)
        caches = Caches(mode)
        s = caches.steps

        h = x
        for i, conv in enumerate((self.conv1, self.conv2), start=1):
            h, s[f"conv{i}"] = L.conv_forward(h, conv)
            h, s[f"relu{i}"] = L.relu_forward(h)
            h, s[f"pool{i}"] = L.maxpool_forward(h)
            h, s[f"drop{i}"] = L.dropout_forward(h, drop)
        h, s["conv3"] = L.conv_forward(h, self.conv3)
        h, s["relu3"] = L.relu_forward(h)
        if self.hidden is None:
            h, s["gap"] = L.gap_forward(h)
            h, s["drop3"] = L.dropout_forward(h, drop)
        else:
            h, s["hidden"] = L.dense_forward(h, self.hidden)
            h, s["relu_h"] = L.relu_forward(h)
            h, s["drop3"] = L.dropout_forward(h, drop)
        logits, s["classifier"] = L.dense_forward(h, self.classifier)
        return logits, caches

    def backward(self, grad_logits: np.ndarray, caches: Caches) -> dict[str, np.ndarray]:
        if not isinstance(caches, Caches) or not caches.steps:
            raise UsageError("backward needs the caches of a forward pass")
        if caches.mode != "train":
            raise UsageError("backward requires caches from a train-mode forward")
        s = caches.steps
        grads = {}
        g, grads["classifier.weights"], grads["classifier.bias"] = L.dense_backward(
            grad_logits, s["classifier"], self.classifier)
        g = L.dropout_backward(g, s["drop3"])
        if self.hidden is None:
            g = L.gap_backward(g.reshape(g.shape[0], -1, 1, 1), s["gap"])
        else:
            g = L.relu_backward(g, s["relu_h"])
            g, grads["hidden.weights"], grads["hidden.bias"] = L.dense_backward(
                g, s["hidden"], self.hidden)
        g = L.relu_backward(g, s["relu3"])
        g, grads["conv3.weights"], grads["conv3.bias"] = L.conv_backward(g, s["conv3"], self.conv3)
        for i, conv in ((2, self.conv2), (1, self.conv1)):
            g = L.dropout_backward(g, s[f"drop{i}"])
            g = L.maxpool_backward(g, s[f"pool{i}"])
            g = L.relu_backward(g, s[f"relu{i}"])
            g, grads[f"conv{i}.weights"], grads[f"conv{i}.bias"] = L.conv_backward(
                g, s[f"conv{i}"], conv, input_grad=i > 1)
        return {name: grads[name] for name in self.parameters()}

    def predict_proba(self, x: Tensor4, batch_size: int = 512) -> np.ndarray:
        out = []
        for start in range(0, x.shape[0], batch_size):
            logits, _ = self.forward(x[start:start + batch_size], mode="eval")
            out.append(L.softmax(logits))
        if not out:
            return np.zeros((0, self.config.num_classes), dtype=self.dtype)
        return np.concatenate(out)


def init(config: ModelConfig, seed: int) -> PerceptionNet:
    """He-uniform weights in +-sqrt(2 / fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    dtype = dtype_for(config.precision)

    def uniform(shape, fan_in):
        bound = he_uniform_bound(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    convs = []
    for kh, kw, c_in, c_out, stride in config.conv_geometry():
        w = uniform((kh, kw, c_in, c_out), kh * kw * c_in)
        convs.append(L.ConvLayer(w, np.zeros(c_out, dtype=dtype), stride))

    feat = config.conv_channels[2]
    hidden = None
    if config.hidden_size is not None:
        _, (_, c, h, w) = [s for s in config.shapes(1) if s[0] == "conv3"][0]
        n_in = c * h * w
        hidden = L.DenseLayer(uniform((n_in, config.hidden_size), n_in),
                              np.zeros(config.hidden_size, dtype=dtype))
        feat = config.hidden_size
    classifier = L.DenseLayer(uniform((feat, config.num_classes), feat),
                              np.zeros(config.num_classes, dtype=dtype))
    return PerceptionNet(config, convs, classifier, hidden)


UCL_CONFIG = ModelConfig()
PAMAP2_CONFIG = ModelConfig(input_height=18, num_classes=12)
