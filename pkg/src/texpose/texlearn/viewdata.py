"""Raw-view simulation and per-view inputs for texture learning.

"Real" views are textured, light-jittered oracle renders composited over
random backgrounds. Texture learning additionally needs, per view: a noisy
pose estimate, a corrupted predicted mask, surfel maps and a synthetic
render computed at that pose estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geom.camera import Camera
from ..geom.model import ObjectModel
from ..geom.oracle import DEFAULT_LIGHT, Light, jitter_light, render_oracle
from ..geom.pose import Pose, perturb, sample_view_sphere
from .losses import dilate, erode, pad_mask
from .masking import corrupt_mask


def random_background(rng: np.random.Generator, h: int, w: int,
                      cells=4, noise=0.02) -> np.ndarray:
    """Smooth random colour gradient with mild grain."""
    grid = rng.uniform(0.05, 0.95, size=(cells, cells, 3))
    ys = np.linspace(0, cells - 1, h)
    xs = np.linspace(0, cells - 1, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, cells - 1)
    x1 = np.minimum(x0 + 1, cells - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    img = (grid[y0][:, x0] * (1 - fy) * (1 - fx)
           + grid[y0][:, x1] * (1 - fy) * fx
           + grid[y1][:, x0] * fy * (1 - fx)
           + grid[y1][:, x1] * fy * fx)
    img = img + rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


@dataclass
class RawView:
    """One captured view plus every derived quantity texture learning uses."""
    image: np.ndarray          # (H, W, 3) textured render over background
    pose_gt: Pose
    light: Light
    mask_gt: np.ndarray
    pose_est: Pose = None      # noisy initialisation
    mask_pred: np.ndarray = None   # corrupted estimator mask
    mask_trust: np.ndarray = None  # eroded predicted mask (the M of the losses)
    mask_pad: np.ndarray = None
    surfel_x: np.ndarray = None
    surfel_n: np.ndarray = None
    syn_colour: np.ndarray = None
    syn_mask: np.ndarray = None


@dataclass
class NoiseSpec:
    rot_sigma_deg: float = 5.0
    trans_sigma: float = 0.002
    bite_count: int = 3
    bite_radius: int = 2
    boundary_amp: int = 1


def build_raw_views(model: ObjectModel, cam: Camera, n: int,
                    rng: np.random.Generator, *, distance_range,
                    elevation_range_deg=(-35.0, 35.0),
                    azimuth_range_deg=(0.0, 360.0),
                    roll_range_deg=(-180.0, 180.0), light_jitter_deg=25.0,
                    light: Light = DEFAULT_LIGHT) -> list[RawView]:
    views = []
    for _ in range(n):
        pose = sample_view_sphere(rng, distance_range, elevation_range_deg,
                                  azimuth_range_deg=azimuth_range_deg,
                                  roll_range_deg=roll_range_deg)
        view_light = jitter_light(light, light_jitter_deg, rng)
        render = render_oracle(model, cam, pose, view_light)
        bg = random_background(rng, cam.height, cam.width)
        m = render.mask[..., None]
        image = render.colour * m + bg * (1.0 - m)
        views.append(RawView(image=image, pose_gt=pose, light=view_light,
                             mask_gt=render.mask))
    return views


def prepare_texture_views(model: ObjectModel, cam: Camera, views: list[RawView],
                          rng: np.random.Generator, noise: NoiseSpec,
                          erosion_radius=1) -> list[RawView]:
    """Attach pose estimates, corrupted masks, surfels and synthetic renders.

    Surfels and synthetic patches are computed with the *noisy* pose
    estimate, exactly as the estimator would provide at deployment.
    """
    for view in views:
        view.pose_est = perturb(view.pose_gt, noise.rot_sigma_deg,
                                noise.trans_sigma, rng)
        view.mask_pred = corrupt_mask(view.mask_gt, rng,
                                      bite_count=noise.bite_count,
                                      bite_radius=noise.bite_radius,
                                      boundary_amp=noise.boundary_amp)
        view.mask_trust = erode(view.mask_pred, erosion_radius)
        syn = render_oracle(model, cam, view.pose_est, DEFAULT_LIGHT)
        view.syn_colour = syn.colour
        view.syn_mask = syn.mask
        view.surfel_x = syn.surfel_x
        view.surfel_n = syn.surfel_n
        view.mask_pad = pad_mask(view.mask_pred, view.syn_mask, erosion_radius)
    return views


def patch_rect(view: RawView, patch: int, cam: Camera,
               rng: np.random.Generator, margin=2):
    """Random patch rectangle inside the predicted-mask bounding box."""
    ys, xs = np.nonzero(view.mask_pred > 0.5)
    if len(ys) == 0:
        ys, xs = np.nonzero(dilate(view.mask_gt, 1) > 0.5)
    y_lo = max(0, ys.min() - margin)
    y_hi = min(cam.height - patch, ys.max() + margin - patch + 1)
    x_lo = max(0, xs.min() - margin)
    x_hi = min(cam.width - patch, xs.max() + margin - patch + 1)
    y_hi = max(y_hi, y_lo)
    x_hi = max(x_hi, x_lo)
    y0 = int(rng.integers(y_lo, y_hi + 1))
    x0 = int(rng.integers(x_lo, x_hi + 1))
    return (x0, y0, patch, patch)
