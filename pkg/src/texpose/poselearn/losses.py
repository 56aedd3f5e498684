"""Pose supervision: vertex point-matching plus a translation term."""

from __future__ import annotations

import numpy as np

from ..diffcore import functional as F
from ..geom.model import ObjectModel
from ..geom.pose import Pose


def loss_pose(pred: Pose, label: Pose, model: ObjectModel,
              lambda_t: float = 1.0) -> float:
    """Mean vertex distance between the two transformed models, plus an L1
    translation term. Symmetric objects match each label vertex to its
    nearest predicted vertex."""
    verts = model.vertices
    if len(verts) == 0:
        raise ValueError("empty mesh")
    pv = pred.apply(verts)
    lv = label.apply(verts)
    if len(model.symmetry_group) > 1:
        d2 = np.sum((lv[:, None, :] - pv[None, :, :]) ** 2, axis=-1)
        vertex_term = float(np.mean(np.sqrt(d2.min(axis=1))))
    else:
        vertex_term = float(np.mean(np.linalg.norm(pv - lv, axis=1)))
    trans_term = float(np.sum(np.abs(pred.translation - label.translation)))
    return vertex_term + lambda_t * trans_term


def nearest_symmetry_label(label: Pose, pred_rot: np.ndarray,
                           model: ObjectModel) -> Pose:
    """The symmetry-equivalent label pose closest to the predicted rotation."""
    if len(model.symmetry_group) <= 1:
        return label
    best, best_trace = label, -np.inf
    for sym in model.symmetry_group:
        cand = label.compose(sym)
        trace = float(np.trace(pred_rot.T @ cand.rotation))
        if trace > best_trace:
            best, best_trace = cand, trace
    return best


def pose_loss_batch(rot, trans, label_rots: np.ndarray, label_trans: np.ndarray,
                    verts: np.ndarray, lambda_t: float = 1.0):
    """Tape version over a batch: rot (B, 3, 3), trans (B, 3).

    Labels are constants; for symmetric objects pass labels already snapped
    to the nearest symmetry-equivalent pose.
    """
    b = label_rots.shape[0]
    vt = verts.T  # (3, V)
    pv = rot @ vt + F.reshape(trans, (b, 3, 1))
    lv = label_rots @ vt + label_trans[:, :, None]
    diff = pv - lv
    dist = F.sqrt(F.total(diff * diff, axis=1) + 1e-18)
    vertex_term = F.mean(dist)
    dt = trans - label_trans
    trans_term = F.mean(F.total(F.absolute(dt), axis=1))
    return vertex_term + lambda_t * trans_term


def mask_bce(logits, targets: np.ndarray):
    """Binary cross-entropy with logits (numerically stable form)."""
    return F.mean(F.softplus(logits) - logits * targets)
