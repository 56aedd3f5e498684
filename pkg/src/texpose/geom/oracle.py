"""Analytic oracle renderer: pixel-perfect colour, depth, mask and surfels.

This is the stand-in for the CAD rendering pipeline; it supplies ground-truth
labels for geometric pretraining, the synthetic patches used for boundary
regularisation, and the test imagery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera, object_rays
from .model import ObjectModel, nocs
from .pose import Pose, exp_so3
from .raycast import oriented_normals, raycast_batch


@dataclass(frozen=True)
class Light:
    """One directional light in the object's world frame plus an ambient term."""
    direction: tuple = (0.45, -0.35, 0.82)
    ambient: float = 0.4
    diffuse: float = 0.6

    def unit_direction(self) -> np.ndarray:
        d = np.asarray(self.direction, dtype=np.float64)
        return d / np.linalg.norm(d)


DEFAULT_LIGHT = Light()
# the impoverished pretraining domain: shaded (shape-informative) but
# untextured grey under one fixed light, unlike the jittered-light textured
# "real" domain
FLAT_LIGHT = Light(ambient=0.45, diffuse=0.55)


def jitter_light(light: Light, sigma_deg: float, rng: np.random.Generator) -> Light:
    """Rotate the light direction by a random small rotation."""
    if sigma_deg <= 0:
        return light
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.normal(0.0, np.radians(sigma_deg))
    d = exp_so3(axis * angle) @ light.unit_direction()
    return Light(tuple(d), light.ambient, light.diffuse)


@dataclass
class OracleRender:
    colour: np.ndarray    # (H, W, 3) in [0, 1]
    depth: np.ndarray     # (H, W) ray distance in meters, 0 where no hit
    mask: np.ndarray      # (H, W) float 0/1
    surfel_x: np.ndarray  # (H, W, 3) normalised object coords, 0 off-object
    surfel_n: np.ndarray  # (H, W, 3) unit camera-frame normals, 0 off-object


def shade(colours: np.ndarray, normals_obj: np.ndarray, light: Light) -> np.ndarray:
    lam = np.maximum(normals_obj @ light.unit_direction(), 0.0)
    return np.clip(colours * (light.ambient + light.diffuse * lam[..., None]), 0.0, 1.0)


def render_oracle(model: ObjectModel, cam: Camera, pose: Pose,
                  light: Light = DEFAULT_LIGHT) -> OracleRender:
    h, w = cam.height, cam.width
    px, py = cam.pixel_grid()
    origins, dirs, t0, t1, valid = object_rays(cam, pose, px, py, model.bound_radius)
    o_flat = origins.reshape(-1, 3)
    d_flat = dirs.reshape(-1, 3)
    v_flat = valid.reshape(-1)

    t = np.zeros(h * w)
    tri = np.full(h * w, -1, dtype=np.int64)
    if v_flat.any():
        tt, tri_v, hit = raycast_batch(model, o_flat[v_flat], d_flat[v_flat])
        t_v = np.where(hit, tt, 0.0)
        t[v_flat] = t_v
        tri[v_flat] = np.where(hit, tri_v, -1)
    hit_flat = tri >= 0

    colour = np.zeros((h * w, 3))
    surf_x = np.zeros((h * w, 3))
    surf_n = np.zeros((h * w, 3))
    if hit_flat.any():
        pts = o_flat[hit_flat] + t[hit_flat, None] * d_flat[hit_flat]
        normals = oriented_normals(model, tri[hit_flat], d_flat[hit_flat])
        base = model.colour_fn(pts)
        colour[hit_flat] = shade(base, normals, light)
        surf_x[hit_flat] = nocs(model, pts, tol=1e-4)
        surf_n[hit_flat] = normals @ pose.rotation.T

    depth = np.where(hit_flat, t, 0.0).reshape(h, w)
    return OracleRender(
        colour=colour.reshape(h, w, 3),
        depth=depth,
        mask=hit_flat.astype(np.float64).reshape(h, w),
        surfel_x=surf_x.reshape(h, w, 3),
        surfel_n=surf_n.reshape(h, w, 3),
    )


def flat_render(model: ObjectModel, cam: Camera, pose: Pose,
                grey=0.55) -> OracleRender:
    """Unshaded uniform-grey render: the impoverished synthetic-pretraining domain."""
    textured_fn = model.colour_fn
    try:
        model.colour_fn = lambda pts: np.full(pts.shape[:-1] + (3,), grey)
        return render_oracle(model, cam, pose, FLAT_LIGHT)
    finally:
        model.colour_fn = textured_fn


def project_centre(cam: Camera, pose: Pose) -> np.ndarray:
    """Pixel coordinates of the object origin under the given pose."""
    centre_cam = pose.translation
    return cam.project(centre_cam[None, :])[0]
