"""The patch discriminator and the fixed multi-scale feature extractor."""

from __future__ import annotations

import numpy as np

from ..diffcore import ParamSet
from ..diffcore import functional as F


class _NumpyView:
    def __init__(self, params: ParamSet):
        self._params = params

    def __getitem__(self, name):
        return self._params.value(name)


class Discriminator:
    """Small strided conv classifier over [S_x, S_n, colour] patches.

    Four stride-2 convolutions with leaky-relu, then a dense sigmoid head
    producing one realism score per patch.
    """

    def __init__(self, patch_size=16, in_channels=9, channels=(32, 64, 64, 64),
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.patch_size = patch_size
        self.channels = tuple(channels)
        self.in_channels = in_channels
        self.params = ParamSet()
        c_prev = in_channels
        spatial = patch_size
        for i, c in enumerate(self.channels):
            fan_in = c_prev * 9
            self.params.add(f"disc.c{i}.w",
                            rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c, c_prev, 3, 3)))
            self.params.add(f"disc.c{i}.b", np.zeros(c))
            c_prev = c
            spatial = (spatial - 1) // 2 + 1
        self.head_in = c_prev * spatial * spatial
        self.params.add("disc.head.w",
                        rng.normal(0.0, np.sqrt(1.0 / self.head_in),
                                   size=(self.head_in, 1)))
        self.params.add("disc.head.b", np.zeros(1))

    def numpy_params(self):
        return _NumpyView(self.params)

    def apply(self, P, x):
        """(B, 9, h, w) patches -> (B,) scores in (0, 1)."""
        h = x
        for i in range(len(self.channels)):
            w = P[f"disc.c{i}.w"]
            b = F.reshape(P[f"disc.c{i}.b"], (1, self.channels[i], 1, 1))
            h = F.leaky_relu(F.conv2d(h, w, stride=2, pad=1) + b, 0.2)
        n = F.value(h).shape[0]
        flat = F.reshape(h, (n, self.head_in))
        out = flat @ P["disc.head.w"] + P["disc.head.b"]
        return F.reshape(F.sigmoid(out), (-1,))


class FeatureExtractor:
    """Frozen multi-scale pyramid: three (3x3 conv + average pool) stages with
    orthogonally initialised filters, seeded at construction. Stands in for a
    pretrained deep feature network in the boundary regulariser."""

    def __init__(self, seed=0, channels=(12, 24, 32), in_channels=3):
        rng = np.random.default_rng(seed)
        self.channels = tuple(channels)
        self.weights = []
        c_prev = in_channels
        for c in self.channels:
            fan_in = c_prev * 9
            if c > fan_in:
                raise ValueError("orthogonal init needs out <= in * 9")
            gauss = rng.normal(size=(fan_in, fan_in))
            q, r = np.linalg.qr(gauss)
            q = q * np.sign(np.diag(r))  # deterministic sign convention
            w = q[:, :c].T.reshape(c, c_prev, 3, 3)
            w.setflags(write=False)
            self.weights.append(w)
            c_prev = c

    def features(self, x):
        """(B, C, h, w) image -> list of per-stage feature maps."""
        out = []
        h = x
        for w in self.weights:
            h = F.conv2d(h, w, stride=1, pad=1)
            hh, ww = F.value(h).shape[2], F.value(h).shape[3]
            if hh >= 2 and ww >= 2:
                if hh % 2:
                    h = h[:, :, :hh - 1, :]
                if ww % 2:
                    h = h[:, :, :, :ww - 1]
                h = F.avg_pool2d(h, 2)
            out.append(h)
        return out
