"""Adam optimiser with global-norm gradient clipping."""

from __future__ import annotations

import numpy as np

from .engine import ParamSet


class Adam:
    """Updates a subset of a ParamSet from gradient dicts.

    Gradient clipping rescales the whole gradient dict when its global L2
    norm exceeds `clip_norm`; adversarial steps on small patch batches are
    noisy enough to need it.
    """

    def __init__(self, params: ParamSet, lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8, clip_norm=10.0):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, grads: dict) -> float:
        """Apply one update; returns the (pre-clip) global gradient norm."""
        items = [(n, g) for n, g in grads.items()
                 if n in self.params and self.params.trainable(n)]
        if not items:
            return 0.0
        gnorm = float(np.sqrt(sum(float(np.sum(g * g)) for _, g in items)))
        scale = 1.0
        if self.clip_norm is not None and gnorm > self.clip_norm > 0:
            scale = self.clip_norm / gnorm
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, g in items:
            g = g * scale
            m = self._m.get(name)
            v = self._v.get(name)
            if m is None:
                m = np.zeros_like(g)
                v = np.zeros_like(g)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self._m[name] = m
            self._v[name] = v
            update = self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            self.params.set_value(name, self.params.value(name) - update)
        return gnorm
