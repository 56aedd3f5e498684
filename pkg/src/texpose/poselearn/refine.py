"""Render-and-compare pose refinement: the baseline scheme.

Pose is parameterised in the rotation tangent space at the initial estimate
plus a translation offset, and descended on a mask + masked-colour
consistency energy rendered differentiably through the pretrained field.
"""

from __future__ import annotations

import numpy as np

from ..diffcore import Adam, NonFiniteError, ParamSet, Tape
from ..diffcore import functional as F
from ..geom.camera import Camera, object_rays
from ..geom.model import ObjectModel
from ..geom.pose import Pose, exp_so3
from ..field.neural_field import NeuralField
from ..texlearn.losses import dilate
from .losses import loss_pose


def rodrigues_tape(w):
    """Full Rodrigues formula on the tape; callers keep |w| off exact zero."""
    theta2 = F.total(w * w) + 1e-24
    theta = F.sqrt(theta2)
    s = F.sin(theta) / theta
    c = (1.0 - F.cos(theta)) / theta2
    wx, wy, wz = w[0:1], w[1:2], w[2:3]
    zero = wx * 0.0
    k = F.reshape(F.concat([zero, -wz, wy, wz, zero, -wx, -wy, wx, zero]),
                  (3, 3))
    return np.eye(3) + s * k + c * (k @ k)


def rend_energy(render_m, render_c, obs_m, obs_c):
    """Equal-weighted mask and masked-colour consistency."""
    dm = render_m - obs_m
    dc = render_c * F.reshape(render_m, (-1, 1)) - obs_c
    return F.mean(dm * dm) + F.mean(F.total(dc * dc, axis=-1))


def _refinement_grid(cam: Camera, mask_obs: np.ndarray, stride: int, margin=3):
    ys, xs = np.nonzero(dilate(mask_obs, margin) > 0.5)
    if len(ys) == 0:
        y0, y1, x0, x1 = 0, cam.height, 0, cam.width
    else:
        y0, y1 = ys.min(), ys.max() + 1
        x0, x1 = xs.min(), xs.max() + 1
    gx, gy = np.meshgrid(np.arange(x0, x1, stride), np.arange(y0, y1, stride))
    return gx.reshape(-1), gy.reshape(-1)


def refine_render_compare(field: NeuralField, cam: Camera, pose_init: Pose,
                          image: np.ndarray, mask_obs: np.ndarray, *,
                          steps: int, lr=5e-3, k=None, stride=2,
                          gt_pose: Pose | None = None,
                          model: ObjectModel | None = None):
    """Gradient refinement of one pose against (mask, image) observations.

    Returns (refined_pose, trace, diverged). The trace holds steps+1 entries
    of the pose error against the hidden ground truth (nan when gt_pose or
    model is absent) and is truncated on divergence.
    """
    gx, gy = _refinement_grid(cam, mask_obs, stride)
    px = gx.astype(np.float64) + 0.5
    py = gy.astype(np.float64) + 0.5
    d_cam = cam.directions(px, py)
    obs_m = mask_obs[gy, gx]
    obs_c = image[gy, gx] * obs_m[:, None]

    params = ParamSet()
    for name in field.params.names():
        params.add(name, field.params.value(name), trainable=False)
    # exact zeros: with perfectly consistent observations the residual, and
    # hence every gradient, is exactly zero and the pose never moves
    params.add("w", np.zeros(3))
    params.add("dt", np.zeros(3))
    opt = Adam(params, lr=lr)
    r_init = pose_init.rotation
    t_init = pose_init.translation

    def current_pose() -> Pose:
        return Pose(r_init @ exp_so3(params.value("w")),
                    t_init + params.value("dt"))

    def error(p: Pose) -> float:
        if gt_pose is None or model is None:
            return float("nan")
        return loss_pose(p, gt_pose, model, lambda_t=0.0)

    trace = [error(current_pose())]
    diverged = False
    for _ in range(steps):
        pose_now = current_pose()
        _, _, t0, t1, valid = object_rays(cam, pose_now, px, py,
                                          field.bound_radius)
        samples = field.sample_rays(t0, t1, valid,
                                    k or field.cfg.samples_per_ray, False)

        def build(p):
            rot = r_init @ rodrigues_tape(p["w"])
            trans = t_init + p["dt"]
            origins = F.broadcast_to(-(F.reshape(trans, (1, 3)) @ rot),
                                     (len(px), 3))
            dirs = d_cam @ rot
            out = field.render_rays(p, origins, dirs, t0, t1, valid,
                                    mode="pretrain", samples=samples)
            return rend_energy(out["M"], out["C"], obs_m, obs_c)

        tape = Tape(build)
        try:
            tape.forward(params)
        except NonFiniteError:
            diverged = True
            break
        grads = tape.backward(1.0)
        opt.step(grads)
        trace.append(error(current_pose()))
    return current_pose(), trace, diverged
