"""Ray sampling: K quadrature points per ray with fixed bin widths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geom.camera import Ray


@dataclass
class RaySamples:
    t: np.ndarray       # (K,) sorted sample distances
    delta: np.ndarray   # (K,) quadrature step sizes (the bin widths)


def sample_ray(ray: Ray, k: int, stratified: bool,
               rng: np.random.Generator | None = None) -> RaySamples:
    """K samples between t_near and t_far: bin midpoints, or uniform jitter
    within each bin when stratified. Step sizes are the bin widths, so they
    always sum to the full interval and piecewise-constant densities are
    integrated exactly."""
    if k < 2:
        raise ValueError("need at least 2 samples per ray")
    if not ray.t_far > ray.t_near:
        raise ValueError("degenerate ray interval")
    t, delta = sample_bins(np.asarray([ray.t_near]), np.asarray([ray.t_far]),
                           k, stratified, rng)
    return RaySamples(t=t[0], delta=delta[0])


def sample_bins(t_near: np.ndarray, t_far: np.ndarray, k: int, stratified: bool,
                rng: np.random.Generator | None = None):
    """Vectorised sampling for (R,) interval arrays; returns t, delta of (R, K).

    Degenerate intervals (t_far <= t_near) are allowed here and produce zero
    step sizes, which composite to exactly empty rays.
    """
    t_near = np.asarray(t_near, dtype=np.float64)
    t_far = np.asarray(t_far, dtype=np.float64)
    span = np.maximum(t_far - t_near, 0.0)
    h = span / k
    offsets = np.arange(k, dtype=np.float64)
    if stratified:
        if rng is None:
            raise ValueError("stratified sampling needs an rng")
        u = rng.uniform(size=(len(t_near), k))
    else:
        u = 0.5
    t = t_near[:, None] + (offsets[None, :] + u) * h[:, None]
    delta = np.broadcast_to(h[:, None], t.shape).copy()
    return t, delta
