"""Sinusoidal positional encoding."""

from __future__ import annotations

import numpy as np

from ..diffcore import Tensor
from ..diffcore import functional as F


def encode(x, levels: int):
    """[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x), cos(...)].

    Output dimension is (2L + 1) * dim(x); levels = 0 returns x unchanged.
    """
    if levels < 0:
        raise ValueError("levels must be >= 0")
    if levels == 0:
        return x
    parts = [x]
    for level in range(levels):
        scaled = x * (np.pi * (2.0 ** level))
        parts.append(F.sin(scaled))
        parts.append(F.cos(scaled))
    axis = (x.ndim if isinstance(x, Tensor) else np.ndim(x)) - 1
    return F.concat(parts, axis=axis)


def encoded_dim(dim: int, levels: int) -> int:
    return (2 * levels + 1) * dim
