"""Rigid transforms (object frame -> camera frame) and pose sampling."""

from __future__ import annotations

import numpy as np

_ORTHO_TOL = 1e-8


class Pose:
    """Rotation (3x3, right-handed orthonormal) plus translation in meters."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation):
        r = np.asarray(rotation, dtype=np.float64).reshape(3, 3).copy()
        t = np.asarray(translation, dtype=np.float64).reshape(3).copy()
        err = np.max(np.abs(r.T @ r - np.eye(3)))
        if err > _ORTHO_TOL:
            raise ValueError(f"rotation not orthonormal (|R^T R - I| = {err:.3g})")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must have determinant +1")
        r.setflags(write=False)
        t.setflags(write=False)
        self.rotation = r
        self.translation = t

    def __repr__(self):
        return f"Pose(t={self.translation.round(4).tolist()})"

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (N,3) or (3,) points from object to camera frame."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def compose(self, other: "Pose") -> "Pose":
        """(self o other): apply `other` first, then `self`."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def invert(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)


def identity() -> Pose:
    return Pose(np.eye(3), np.zeros(3))


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def skew(w: np.ndarray) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_so3(w) -> np.ndarray:
    """Rodrigues: axis-angle 3-vector to rotation matrix."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3) + skew(w)
    k = skew(w / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def geodesic_deg(ra: np.ndarray, rb: np.ndarray) -> float:
    """Angle of the relative rotation, in degrees."""
    tr = np.trace(ra @ rb.T)
    c = np.clip((tr - 1.0) * 0.5, -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


def perturb(pose: Pose, rot_sigma_deg: float, trans_sigma: float,
            rng: np.random.Generator) -> Pose:
    """Compose rotational axis-angle noise (half-normal angle about a random
    axis, applied in the object frame) and add Gaussian translation noise."""
    if rot_sigma_deg < 0 or trans_sigma < 0:
        raise ValueError("noise sigmas must be non-negative")
    angle = abs(rng.normal(0.0, np.radians(rot_sigma_deg)))
    axis = rng.normal(size=3)
    n = np.linalg.norm(axis)
    axis = axis / n if n > 1e-12 else np.array([0.0, 0.0, 1.0])
    dr = exp_so3(axis * angle)
    dt = rng.normal(0.0, trans_sigma, size=3) if trans_sigma > 0 else np.zeros(3)
    return Pose(pose.rotation @ dr, pose.translation + dt)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """World->camera pose for a camera at `eye` looking at `target`.

    Camera convention: +x right, +y down, +z forward.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd], axis=0)
    return Pose(r, -r @ eye)


def sample_view_sphere(rng: np.random.Generator, distance_range,
                       elevation_range_deg=(-35.0, 35.0),
                       azimuth_range_deg=(0.0, 360.0),
                       roll_range_deg=(-180.0, 180.0)) -> Pose:
    """Uniform pose on a spherical shell, camera looking at the origin with a
    random roll about the optical axis.

    Captured-sequence benchmarks have limited in-plane rotation; configs
    narrow `roll_range_deg` to mirror that."""
    az = np.radians(rng.uniform(*azimuth_range_deg))
    el = np.radians(rng.uniform(*elevation_range_deg))
    dist = rng.uniform(*distance_range)
    roll = np.radians(rng.uniform(*roll_range_deg))
    eye = dist * np.array([np.cos(el) * np.cos(az),
                           np.cos(el) * np.sin(az),
                           np.sin(el)])
    pose = look_at(eye, np.zeros(3))
    c, s = np.cos(roll), np.sin(roll)
    rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return Pose(rz @ pose.rotation, rz @ pose.translation)
