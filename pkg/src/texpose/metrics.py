"""Pose and image metrics: ADD, ADD-S, threshold accuracy, rotation and
translation errors, PSNR and IoU."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom.model import ObjectModel
from .geom.pose import Pose, geodesic_deg

_NN_CHUNK = 512


def add(pred: Pose, gt: Pose, model: ObjectModel) -> float:
    """Mean distance between correspondingly transformed model vertices."""
    if len(model.vertices) == 0:
        raise ValueError("empty mesh")
    return float(np.mean(np.linalg.norm(
        pred.apply(model.vertices) - gt.apply(model.vertices), axis=1)))


def add_s(pred: Pose, gt: Pose, model: ObjectModel) -> float:
    """Mean distance from each ground-truth vertex to its nearest predicted
    vertex (exact O(n^2) search; desk-scale meshes stay small)."""
    if len(model.vertices) == 0:
        raise ValueError("empty mesh")
    pv = pred.apply(model.vertices)
    gv = gt.apply(model.vertices)
    total = 0.0
    for lo in range(0, len(gv), _NN_CHUNK):
        chunk = gv[lo:lo + _NN_CHUNK]
        d2 = np.sum((chunk[:, None, :] - pv[None, :, :]) ** 2, axis=-1)
        total += float(np.sum(np.sqrt(d2.min(axis=1))))
    return total / len(gv)


def symmetry_discretisation_bound(model: ObjectModel) -> float:
    """Upper bound on ADD-S under any declared symmetry element, from the
    mesh discretisation: the largest nearest-vertex distance after applying
    each group element at identity placement."""
    bound = 0.0
    ident = Pose(np.eye(3), np.zeros(3))
    for sym in model.symmetry_group:
        if np.allclose(sym.rotation, np.eye(3)) and \
                np.allclose(sym.translation, 0):
            continue
        bound = max(bound, add_s(sym, ident, model))
    return bound


@dataclass
class PoseErrorReport:
    """Per-sample pose errors plus the threshold accuracy convention."""
    add: list = field(default_factory=list)
    add_s: list = field(default_factory=list)
    rot_deg: list = field(default_factory=list)
    trans: list = field(default_factory=list)

    def record(self, pred: Pose, gt: Pose, model: ObjectModel):
        a = add(pred, gt, model)
        s = add_s(pred, gt, model)
        self.add.append(a)
        self.add_s.append(s)
        self.rot_deg.append(geodesic_deg(pred.rotation, gt.rotation))
        self.trans.append(float(np.linalg.norm(pred.translation - gt.translation)))
        return a, s

    def __len__(self):
        return len(self.add)


def add_accuracy(report: PoseErrorReport, model: ObjectModel,
                 threshold_frac: float = 0.10, symmetric: bool = False) -> float:
    """Percent of samples with error strictly below threshold_frac * diameter.

    Symmetric objects are scored on ADD-S.
    """
    if len(report) == 0:
        raise ValueError("empty report")
    errs = np.asarray(report.add_s if symmetric else report.add)
    threshold = threshold_frac * model.diameter
    return float(100.0 * np.mean(errs < threshold))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("image shapes differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def iou(m1: np.ndarray, m2: np.ndarray, thresh: float = 0.5) -> float:
    m1 = np.asarray(m1) > thresh
    m2 = np.asarray(m2) > thresh
    if m1.shape != m2.shape:
        raise ValueError("mask shapes differ")
    union = np.logical_or(m1, m2).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(m1, m2).sum() / union)
