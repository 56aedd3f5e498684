"""Dual-mode math helpers: each works on a Tensor (graph-recorded) or a plain
ndarray (fast evaluation path). Model code is written once against these and
runs with or without gradients."""

from __future__ import annotations

import numpy as np

from .engine import Tensor, _sigmoid_np, _softplus_np, avg_pool2d as _avg_pool_t
from .engine import concat as _concat_t
from .engine import conv2d as _conv2d_t, conv2d_forward


def _is_t(x):
    return isinstance(x, Tensor)


def exp(x):
    return x.exp() if _is_t(x) else np.exp(x)


def log(x):
    return x.log() if _is_t(x) else np.log(x)


def sqrt(x):
    return x.sqrt() if _is_t(x) else np.sqrt(x)


def absolute(x):
    return x.abs() if _is_t(x) else np.abs(x)


def relu(x):
    return x.relu() if _is_t(x) else np.maximum(x, 0.0)


def leaky_relu(x, alpha=0.2):
    if _is_t(x):
        return x.leaky_relu(alpha)
    return np.where(x > 0, x, alpha * x)


def softplus(x):
    return x.softplus() if _is_t(x) else _softplus_np(np.asarray(x, dtype=np.float64))


def sigmoid(x):
    return x.sigmoid() if _is_t(x) else _sigmoid_np(np.asarray(x, dtype=np.float64))


def sin(x):
    return x.sin() if _is_t(x) else np.sin(x)


def cos(x):
    return x.cos() if _is_t(x) else np.cos(x)


def clip(x, lo, hi):
    return x.clip(lo, hi) if _is_t(x) else np.clip(x, lo, hi)


def total(x, axis=None, keepdims=False):
    if _is_t(x):
        return x.sum(axis=axis, keepdims=keepdims)
    return np.sum(x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False):
    if _is_t(x):
        return x.mean(axis=axis, keepdims=keepdims)
    return np.mean(x, axis=axis, keepdims=keepdims)


def cumsum(x, axis):
    return x.cumsum(axis) if _is_t(x) else np.cumsum(x, axis=axis)


def concat(xs, axis=0):
    if any(_is_t(x) for x in xs):
        return _concat_t(xs, axis=axis)
    return np.concatenate(xs, axis=axis)


def reshape(x, shape):
    return x.reshape(shape) if _is_t(x) else np.reshape(x, shape)


def broadcast_to(x, shape):
    if _is_t(x):
        return x.broadcast_to(shape)
    return np.ascontiguousarray(np.broadcast_to(x, shape))


def conv2d(x, w, stride=1, pad=0):
    if _is_t(x) or _is_t(w):
        return _conv2d_t(x, w, stride=stride, pad=pad)
    return conv2d_forward(x, w, stride, pad)[0]


def avg_pool2d(x, k):
    if _is_t(x):
        return _avg_pool_t(x, k)
    b, c, h, w = x.shape
    return x.reshape(b, c, h // k, k, w // k, k).mean(axis=(3, 5))


def value(x) -> np.ndarray:
    """Underlying ndarray of a Tensor, or the array itself."""
    return x.value if _is_t(x) else np.asarray(x)
