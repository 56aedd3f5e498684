"""Simulated segmentation imperfection: corrupted estimator masks."""

from __future__ import annotations

import numpy as np

from .losses import dilate, erode


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """(N, 2) row/col indices of foreground pixels on the mask boundary."""
    rim = np.asarray(mask) - erode(mask, 1)
    return np.argwhere(rim > 0.5)


def corrupt_mask(mask: np.ndarray, rng: np.random.Generator, *,
                 bite_count=3, bite_radius=2, boundary_amp=1) -> np.ndarray:
    """Oracle mask -> plausible estimator output.

    Applies a random whole-boundary dilation or erosion, then removes
    `bite_count` disks of `bite_radius` centred on random boundary pixels.
    """
    m = np.asarray(mask, dtype=np.float64).copy()
    if boundary_amp > 0:
        roll = rng.integers(0, 3)
        if roll == 0:
            m = erode(m, boundary_amp)
        elif roll == 2:
            m = dilate(m, boundary_amp)
    if bite_count > 0 and bite_radius > 0:
        rim = boundary_pixels(m)
        if len(rim):
            picks = rim[rng.integers(0, len(rim), size=bite_count)]
            yy, xx = np.mgrid[0:m.shape[0], 0:m.shape[1]]
            for cy, cx in picks:
                disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= bite_radius ** 2
                m[disk] = 0.0
    return m
