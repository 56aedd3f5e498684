"""Estimator training on synthesised datasets."""

from __future__ import annotations

import numpy as np

from ..diffcore import Adam, NonFiniteError, Tape
from ..diffcore import functional as F
from ..geom.camera import Camera
from ..geom.model import ObjectModel
from ..geom.oracle import project_centre
from ..texlearn.training import TrainingDiverged
from .estimator import CropSpec, PoseEstimator, extract_crop, matrix_to_rot6d, \
    rot6d_to_matrix_batch
from .losses import mask_bce, nearest_symmetry_label, pose_loss_batch
from .synth import SynthDataset


def _downsample_mask(mask: np.ndarray, out: int) -> np.ndarray:
    h, w = mask.shape
    if h % out == 0 and w % out == 0:
        return mask.reshape(out, h // out, out, w // out).mean(axis=(1, 3))
    ys = np.linspace(0, h, out + 1).astype(int)
    xs = np.linspace(0, w, out + 1).astype(int)
    result = np.zeros((out, out))
    for i in range(out):
        for j in range(out):
            block = mask[ys[i]:ys[i + 1], xs[j]:xs[j + 1]]
            result[i, j] = block.mean() if block.size else 0.0
    return result


def make_training_example(sample, cam: Camera, crop: CropSpec, cfg,
                          rng: np.random.Generator):
    """Crop + labels for one synthetic sample, with jittered crop centre."""
    centre = project_centre(cam, sample.pose)
    jitter = rng.uniform(-crop.jitter_px, crop.jitter_px, size=2) \
        if crop.jitter_px > 0 else np.zeros(2)
    crop_img, window_centre = extract_crop(sample.image, centre + jitter,
                                           crop.crop_px, cfg.input_size)
    mask_crop, _ = extract_crop(sample.mask, centre + jitter, crop.crop_px,
                                cfg.input_size)
    scale = cfg.input_size / crop.crop_px
    du = (centre[0] - window_centre[0]) * scale
    dv = (centre[1] - window_centre[1]) * scale
    logz = np.log(sample.pose.translation[2] / crop.z_nominal)
    return {
        "crop": np.transpose(crop_img, (2, 0, 1)),
        "rot6d": matrix_to_rot6d(sample.pose.rotation),
        "uvz": np.array([du, dv, logz]),
        "rot": sample.pose.rotation,
        "trans": sample.pose.translation,
        "mask": _downsample_mask(mask_crop, cfg.mask_size),
        "window_centre": window_centre,
    }


def decode_batch_translation(pose_raw, window_centres: np.ndarray,
                             crop: CropSpec, cam: Camera, input_size: int):
    """Tape decode of (du, dv, log z) into camera-frame translations."""
    scale = crop.crop_px / input_size
    u = window_centres[:, 0:1] + pose_raw[:, 6:7] * scale
    v = window_centres[:, 1:2] + pose_raw[:, 7:8] * scale
    z = crop.z_nominal * F.exp(pose_raw[:, 8:9])
    x = (u - cam.cx) * z * (1.0 / cam.fx)
    y = (v - cam.cy) * z * (1.0 / cam.fy)
    return F.concat([x, y, z], axis=1)


def train_estimator(est: PoseEstimator, dataset: SynthDataset,
                    model: ObjectModel, crop: CropSpec, *, steps: int,
                    batch_size: int, lr: float, rng: np.random.Generator,
                    lambda_mask=0.3, lambda_t=1.0, log_every=50,
                    eval_every=None, eval_fn=None) -> dict:
    """Minimise the point-matching pose loss plus mask BCE over minibatches.

    `eval_fn`, when given, is called at `eval_every`-step boundaries and its
    result appended to the returned curve (the baseline's convergence
    protocol)."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    cam = dataset.camera
    opt = Adam(est.params, lr=lr)
    log, curve = [], []
    verts = model.vertices
    for step in range(steps):
        # step decay sharpens the late fit
        if step == int(steps * 0.6):
            opt.lr = lr * 0.5
        elif step == int(steps * 0.85):
            opt.lr = lr * 0.25
        idx = rng.integers(0, len(dataset), size=batch_size)
        examples = [make_training_example(dataset.samples[i], cam, crop,
                                          est.cfg, rng) for i in idx]
        crops = np.stack([e["crop"] for e in examples])
        centres = np.stack([e["window_centre"] for e in examples])
        masks = np.stack([e["mask"] for e in examples])
        label_rots = np.stack([e["rot"] for e in examples])
        label_trans = np.stack([e["trans"] for e in examples])
        if len(model.symmetry_group) > 1:
            pred_rots = _predict_rotations(est, crops)
            snapped = [nearest_symmetry_label(
                _as_pose(label_rots[i], label_trans[i]), pred_rots[i], model)
                for i in range(batch_size)]
            label_rots = np.stack([p.rotation for p in snapped])
            label_trans = np.stack([p.translation for p in snapped])

        def build(p):
            pose_raw, mask_logits = est.apply(p, crops)
            rot = rot6d_to_matrix_batch(pose_raw)
            trans = decode_batch_translation(pose_raw, centres, crop, cam,
                                             est.cfg.input_size)
            pl = pose_loss_batch(rot, trans, label_rots, label_trans, verts,
                                 lambda_t)
            return pl + lambda_mask * mask_bce(mask_logits, masks)

        tape = Tape(build)
        try:
            loss = float(tape.forward(est.params))
        except NonFiniteError as exc:
            raise TrainingDiverged(
                f"estimator training diverged at step {step}: {exc}") from exc
        opt.step(tape.backward(1.0))
        if step % log_every == 0 or step == steps - 1:
            log.append({"step": step, "loss": loss})
        if eval_fn is not None and eval_every and \
                (step % eval_every == eval_every - 1 or step == steps - 1):
            curve.append({"step": step + 1, **eval_fn(est)})
    return {"log": log, "curve": curve,
            "first_loss": log[0]["loss"], "final_loss": log[-1]["loss"]}


def _as_pose(rot, trans):
    from ..geom.pose import Pose
    return Pose(rot, trans)


def _predict_rotations(est: PoseEstimator, crops: np.ndarray) -> np.ndarray:
    pose_raw, _ = est.apply(est.numpy_params(), crops)
    return np.asarray(rot6d_to_matrix_batch(np.asarray(pose_raw)))
