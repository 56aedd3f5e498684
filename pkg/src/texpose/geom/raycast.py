"""Batched Möller-Trumbore ray/triangle intersection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Ray
from .model import ObjectModel

_EPS = 1e-12
_PAIR_BUDGET = 2_000_000  # rays x triangles evaluated per chunk


@dataclass
class Hit:
    t: float
    point: np.ndarray      # object frame
    normal: np.ndarray     # object frame, unit, toward ray origin
    colour_point: np.ndarray


_TRI_CACHE: dict = {}


def _triangle_data(model: ObjectModel):
    key = id(model)
    cached = _TRI_CACHE.get(key)
    if cached is not None and cached[0] is model.vertices:
        return cached[1]
    v0 = model.vertices[model.triangles[:, 0]]
    e1 = model.vertices[model.triangles[:, 1]] - v0
    e2 = model.vertices[model.triangles[:, 2]] - v0
    n = np.cross(e1, e2)
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), _EPS)
    if len(_TRI_CACHE) > 64:
        _TRI_CACHE.clear()
    _TRI_CACHE[key] = (model.vertices, (v0, e1, e2, n))
    return v0, e1, e2, n


def raycast_batch(model: ObjectModel, origins: np.ndarray, dirs: np.ndarray,
                  t_min=1e-6):
    """Nearest intersection per ray.

    Returns (t, tri_index, hit_mask); t is +inf and tri_index -1 for misses.
    """
    v0, e1, e2, _ = _triangle_data(model)
    n_rays = len(origins)
    n_tris = len(v0)
    best_t = np.full(n_rays, np.inf)
    best_tri = np.full(n_rays, -1, dtype=np.int64)
    chunk = max(1, _PAIR_BUDGET // max(n_tris, 1))
    for lo in range(0, n_rays, chunk):
        hi = min(lo + chunk, n_rays)
        o = origins[lo:hi, None, :]
        d = dirs[lo:hi, None, :]
        h = np.cross(d, e2[None, :, :])
        a = np.sum(e1[None, :, :] * h, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = 1.0 / a
            s = o - v0[None, :, :]
            u = f * np.sum(s * h, axis=-1)
            q = np.cross(s, e1[None, :, :])
            v = f * np.sum(d * q, axis=-1)
            t = f * np.sum(e2[None, :, :] * q, axis=-1)
            ok = (np.abs(a) > _EPS) & (u >= -1e-12) & (v >= -1e-12) & \
                 (u + v <= 1.0 + 1e-12) & (t > t_min)
        t = np.where(ok, t, np.inf)
        idx = np.argmin(t, axis=1)
        tval = t[np.arange(hi - lo), idx]
        best_t[lo:hi] = tval
        best_tri[lo:hi] = np.where(np.isfinite(tval), idx, -1)
    return best_t, best_tri, np.isfinite(best_t)


def raycast(model: ObjectModel, ray: Ray):
    """Single-ray convenience wrapper: returns a Hit or None (miss)."""
    t, tri, hit = raycast_batch(model, ray.origin[None, :], ray.direction[None, :])
    if not hit[0]:
        return None
    point = ray.origin + t[0] * ray.direction
    _, _, _, normals = _triangle_data(model)
    n = normals[tri[0]]
    if np.dot(n, ray.direction) > 0:
        n = -n
    return Hit(t=float(t[0]), point=point, normal=n,
               colour_point=model.colour_fn(point[None, :])[0])


def oriented_normals(model: ObjectModel, tri_idx: np.ndarray,
                     dirs: np.ndarray) -> np.ndarray:
    """Per-hit unit normals flipped to face the ray origins."""
    _, _, _, normals = _triangle_data(model)
    n = normals[np.maximum(tri_idx, 0)]
    flip = np.sum(n * dirs, axis=-1) > 0
    n = np.where(flip[:, None], -n, n)
    return n
