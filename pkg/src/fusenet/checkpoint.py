"""Binary checkpoint format.

Layout::

    b"FNKC1" | version (1 byte) | header length (u32 LE) | JSON header | payload

The JSON header carries the model config, training metadata, channel
statistics and a table of buffers ``(name, shape)``. The payload is the
buffers in table order as little-endian float32 or float64, depending on
the model precision. Floats in the header are written with ``repr`` so
they round-trip exactly.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, PerceptionNet, init
from .optim import AdadeltaState

MAGIC = b"FNKC1"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    optimizer: AdadeltaState | None = None
    channel_stats: np.ndarray | None = None
    epoch: int = 0
    val_error: float = float("nan")
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, net: PerceptionNet, **kw) -> "Checkpoint":
        params = {k: v.copy() for k, v in net.parameters().items()}
        opt = kw.pop("optimizer", None)
        if opt is not None:
            opt = AdadeltaState({k: v.copy() for k, v in opt.g.items()},
                                {k: v.copy() for k, v in opt.s.items()},
                                opt.rho, opt.epsilon, opt.lr, opt.steps)
        return cls(net.config, params, opt, **kw)

    def build_model(self) -> PerceptionNet:
        net = init(self.config, seed=0)
        net.load_parameters(self.params)
        return net


def _buffers(ckpt: Checkpoint):
    out = list(ckpt.params.items())
    if ckpt.optimizer is not None:
        out += [(f"opt.g.{k}", v) for k, v in ckpt.optimizer.g.items()]
        out += [(f"opt.s.{k}", v) for k, v in ckpt.optimizer.s.items()]
    return out


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    dtype = "<f4" if ckpt.config.precision == 32 else "<f8"
    buffers = _buffers(ckpt)
    opt = ckpt.optimizer
    header = {
        "config": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "val_error": repr(float(ckpt.val_error)),
        "seed": ckpt.seed,
        "channel_stats": None if ckpt.channel_stats is None else
        [[repr(float(a)), repr(float(b))] for a, b in ckpt.channel_stats],
        "optimizer": None if opt is None else {
            "rho": repr(opt.rho), "epsilon": repr(opt.epsilon), "lr": repr(opt.lr),
            "steps": opt.steps},
        "meta": ckpt.meta,
        "buffers": [[name, list(buf.shape)] for name, buf in buffers],
    }
    blob = json.dumps(header, indent=1, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + bytes([VERSION]) + struct.pack("<I", len(blob)) + blob)
        for _, buf in buffers:
            fh.write(np.ascontiguousarray(buf, dtype=dtype).tobytes())
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e.strerror}") from None
    if raw[:5] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    if len(raw) < 10:
        raise CheckpointError(f"{path}: truncated header")
    if raw[5] != VERSION:
        raise CheckpointError(f"{path}: unsupported version {raw[5]} (expected {VERSION})")
    (hlen,) = struct.unpack("<I", raw[6:10])
    if len(raw) < 10 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        h = json.loads(raw[10:10 + hlen].decode())
        config = ModelConfig.from_dict(h["config"])
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from None

    dtype = np.dtype("<f4" if config.precision == 32 else "<f8")
    pos = 10 + hlen
    bufs = {}
    for name, shape in h["buffers"]:
        nbytes = int(np.prod(shape)) * dtype.itemsize
        if pos + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload at buffer {name}")
        arr = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=pos)
        bufs[name] = arr.reshape(shape).astype(dtype.newbyteorder("="))
        pos += nbytes
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")

    params = {k: v for k, v in bufs.items() if not k.startswith("opt.")}
    opt = None
    if h["optimizer"] is not None:
        o = h["optimizer"]
        opt = AdadeltaState(
            {k: bufs[f"opt.g.{k}"] for k in params}, {k: bufs[f"opt.s.{k}"] for k in params},
            float(o["rho"]), float(o["epsilon"]), float(o["lr"]), int(o["steps"]))
    stats = h["channel_stats"]
    if stats is not None:
        stats = np.array([[float(a), float(b)] for a, b in stats])
    return Checkpoint(config, params, opt, stats, int(h["epoch"]), float(h["val_error"]),
                      int(h["seed"]), h.get("meta", {}))
