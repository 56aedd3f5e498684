"""Pinhole camera and object-frame rays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pose import Pose


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.05
    far: float = 5.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not 0 < self.near < self.far:
            raise ValueError("require 0 < near < far")

    def directions(self, px, py) -> np.ndarray:
        """Unit ray directions in the camera frame for continuous pixel coords."""
        px = np.asarray(px, dtype=np.float64)
        py = np.asarray(py, dtype=np.float64)
        d = np.stack([(px - self.cx) / self.fx,
                      (py - self.cy) / self.fy,
                      np.ones_like(px)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def pixel_grid(self):
        """Pixel-centre coordinate arrays (px, py), each (H, W)."""
        xs = np.arange(self.width, dtype=np.float64) + 0.5
        ys = np.arange(self.height, dtype=np.float64) + 0.5
        return np.meshgrid(xs, ys)

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        """(N,3) camera-frame points to continuous pixel coords (N,2)."""
        p = np.asarray(points_cam, dtype=np.float64)
        z = p[..., 2]
        return np.stack([self.fx * p[..., 0] / z + self.cx,
                         self.fy * p[..., 1] / z + self.cy], axis=-1)


def default_camera(resolution: int, focal: float, near=0.05, far=5.0) -> Camera:
    return Camera(fx=focal, fy=focal, cx=resolution / 2.0, cy=resolution / 2.0,
                  width=resolution, height=resolution, near=near, far=far)


@dataclass
class Ray:
    """Object-frame ray with a valid [t_near, t_far] interval in meters."""
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float
    hits_bound: bool = True


def _sphere_interval(origins, dirs, radius):
    """Entry/exit distances of rays against a centred sphere.

    Returns (t0, t1, valid); rays that miss get a degenerate interval at the
    closest approach so downstream code can treat them as empty.
    """
    b = -np.sum(origins * dirs, axis=-1)
    c = np.sum(origins * origins, axis=-1) - radius * radius
    disc = b * b - c
    valid = disc > 0.0
    root = np.sqrt(np.maximum(disc, 0.0))
    t0 = b - root
    t1 = b + root
    t0 = np.where(valid, t0, b)
    t1 = np.where(valid, t1, b)
    return t0, t1, valid


def object_rays(cam: Camera, pose: Pose, px, py, bound_radius: float):
    """Batched object-frame rays through the given pixels.

    The camera ray is mapped into the object frame by the inverse pose and
    its interval clipped to the object's bounding sphere and the camera's
    near/far planes.
    """
    inv = pose.invert()
    d_cam = cam.directions(px, py)
    d_obj = d_cam @ inv.rotation.T
    o_obj = np.broadcast_to(inv.translation, d_obj.shape).copy()
    t0, t1, valid = _sphere_interval(o_obj.reshape(-1, 3), d_obj.reshape(-1, 3),
                                     bound_radius)
    t0 = np.maximum(t0, cam.near).reshape(d_obj.shape[:-1])
    t1 = np.minimum(t1, cam.far).reshape(d_obj.shape[:-1])
    valid = valid.reshape(d_obj.shape[:-1]) & (t1 > t0)
    return o_obj, d_obj, t0, t1, valid


def generate_ray(cam: Camera, pose: Pose, px: float, py: float,
                 bound_radius: float) -> Ray:
    """Single object-frame ray through a pixel centre."""
    if not (0.0 <= px <= cam.width and 0.0 <= py <= cam.height):
        raise ValueError(f"pixel ({px}, {py}) outside image bounds")
    o, d, t0, t1, valid = object_rays(cam, pose, np.array([px]), np.array([py]),
                                      bound_radius)
    return Ray(o[0], d[0], float(t0[0]), float(t1[0]), bool(valid[0]))
