"""Rank-4 dense arrays in (batch, channels, height, width) layout.

A ``Tensor4`` is simply a C-contiguous numpy array with four dimensions.
The helpers here validate shapes strictly: there is no broadcasting, any
mismatch is a :class:`~fusenet.errors.ShapeError`.
"""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .errors import ShapeError

Tensor4 = np.ndarray

AXES = {"n": 0, "c": 1, "h": 2, "w": 3}
DTYPES = {32: np.float32, 64: np.float64}


def dtype_for(precision: int) -> np.dtype:
    try:
        return np.dtype(DTYPES[precision])
    except KeyError:
        raise ShapeError(f"precision must be 32 or 64, got {precision}") from None


def _check_dims(dims) -> tuple[int, int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4:
        raise ShapeError(f"expected 4 dims (n, c, h, w), got {dims}")
    if any(d < 1 for d in dims):
        raise ShapeError(f"all dims must be >= 1, got {dims}")
    return dims


def tensor4(values, dims=None, precision: int = 32) -> Tensor4:
    """Build a contiguous Tensor4 from nested data or a flat buffer."""
    arr = np.asarray(values, dtype=dtype_for(precision))
    if dims is not None:
        dims = _check_dims(dims)
        if arr.size != int(np.prod(dims)):
            raise ShapeError(f"{arr.size} values cannot fill dims {dims}")
        arr = arr.reshape(dims)
    check(arr)
    return np.ascontiguousarray(arr)


def check(t: Tensor4) -> Tensor4:
    if not isinstance(t, np.ndarray) or t.ndim != 4:
        raise ShapeError(f"expected a rank-4 array, got {getattr(t, 'shape', type(t))}")
    _check_dims(t.shape)
    return t


def zeros(dims, precision: int = 32) -> Tensor4:
    return np.zeros(_check_dims(dims), dtype=dtype_for(precision))


def offset(dims, i: int, j: int, k: int, l: int) -> int:
    """Flat row-major offset of element (i, j, k, l)."""
    n, c, h, w = _check_dims(dims)
    if not (0 <= i < n and 0 <= j < c and 0 <= k < h and 0 <= l < w):
        raise ShapeError(f"index {(i, j, k, l)} out of range for {dims}")
    return ((i * c + j) * h + k) * w + l


def map_binary(a: Tensor4, b: Tensor4, f: Callable) -> Tensor4:
    """Apply ``f`` elementwise; ``a`` and ``b`` must have identical dims."""
    check(a)
    check(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    out = f(a, b)
    if not isinstance(out, np.ndarray):
        out = np.vectorize(f)(a, b)
    return np.ascontiguousarray(out)


def add(a: Tensor4, b: Tensor4) -> Tensor4:
    return map_binary(a, b, np.add)


def sub(a: Tensor4, b: Tensor4) -> Tensor4:
    return map_binary(a, b, np.subtract)


def mul(a: Tensor4, b: Tensor4) -> Tensor4:
    return map_binary(a, b, np.multiply)


def reduce(t: Tensor4, axes: Iterable[str] | str, kind: str = "sum") -> Tensor4:
    """Reduce over named axes (subset of ``"nchw"``); reduced axes keep extent 1."""
    check(t)
    try:
        idx = tuple(sorted({AXES[a] for a in axes}))
    except KeyError as e:
        raise ShapeError(f"unknown axis {e.args[0]!r}; use n, c, h or w") from None
    if kind == "sum":
        return t.sum(axis=idx, keepdims=True)
    if kind == "mean":
        extent = int(np.prod([t.shape[i] for i in idx])) if idx else 1
        return t.sum(axis=idx, keepdims=True) / extent
    if kind == "max":
        return t.max(axis=idx, keepdims=True) if idx else t.copy()
    raise ShapeError(f"unknown reduction {kind!r}")
