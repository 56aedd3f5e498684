"""The two texture-side training loops: geometric pretraining against oracle
labels, and adversarial texture learning from noisily-posed views."""

from __future__ import annotations

import warnings

import numpy as np

from ..diffcore import Adam, NonFiniteError, Tape
from ..diffcore import functional as F
from ..geom.camera import Camera, object_rays
from ..geom.model import ObjectModel
from ..geom.oracle import DEFAULT_LIGHT, render_oracle
from ..geom.pose import sample_view_sphere
from ..field.neural_field import NeuralField
from .losses import LossWeights, PatchBatch, PretrainBatch, dilate, loss_adv, \
    loss_pretrain, loss_tex
from .models import Discriminator, FeatureExtractor
from .viewdata import RawView, patch_rect


class TrainingDiverged(RuntimeError):
    pass


class FreezeViolation(RuntimeError):
    """A parameter block that must stay fixed changed bytes."""


def _pixel_pool(mask: np.ndarray):
    fg = np.argwhere(dilate(mask, 2) > 0.5)
    return fg


def train_geometry(field: NeuralField, model: ObjectModel, cam: Camera, *,
                   steps: int, n_views: int, rays_per_step: int, lr: float,
                   weights: LossWeights, rng: np.random.Generator,
                   distance_range, elevation_range_deg=(-35.0, 35.0),
                   views_per_batch=3, log_every=200) -> dict:
    """Fit the geometry branch (plus a throwaway radiance head) to oracle
    renders from a view sphere, then freeze it.

    Every batch mixes rays from several views; the scale-invariant depth
    term is solved per batch, so single-view batches would leave per-view
    depth biases entirely unconstrained. Returns the training log; raises
    TrainingDiverged on non-finite loss.
    """
    poses = [sample_view_sphere(rng, distance_range, elevation_range_deg)
             for _ in range(n_views)]
    renders = [render_oracle(model, cam, p, DEFAULT_LIGHT) for p in poses]
    pools = [_pixel_pool(r.mask) for r in renders]

    opt = Adam(field.params, lr=lr)
    log = []
    first_loss = None
    final_loss = None
    for step in range(steps):
        if step == int(steps * 0.6):
            opt.lr = lr * 0.5
        elif step == int(steps * 0.85):
            opt.lr = lr * 0.25
        chosen = rng.integers(0, n_views, size=views_per_batch)
        per_view = rays_per_step // views_per_batch
        parts = []
        for v in chosen:
            render = renders[v]
            pool = pools[v]
            n_fg = per_view // 2
            iy = np.concatenate([
                pool[rng.integers(0, len(pool), size=n_fg)][:, 0],
                rng.integers(0, cam.height, size=per_view - n_fg),
            ])
            ix = np.concatenate([
                pool[rng.integers(0, len(pool), size=n_fg)][:, 1],
                rng.integers(0, cam.width, size=per_view - n_fg),
            ])
            px = ix.astype(np.float64) + 0.5
            py = iy.astype(np.float64) + 0.5
            rays = object_rays(cam, poses[v], px, py, field.bound_radius)
            parts.append((rays, render.colour[iy, ix], render.mask[iy, ix],
                          render.depth[iy, ix]))
        origins = np.concatenate([p[0][0] for p in parts])
        dirs = np.concatenate([p[0][1] for p in parts])
        t0 = np.concatenate([p[0][2] for p in parts])
        t1 = np.concatenate([p[0][3] for p in parts])
        valid = np.concatenate([p[0][4] for p in parts])
        samples = field.sample_rays(t0, t1, valid,
                                    field.cfg.samples_per_ray, True, rng)
        target_mask = np.concatenate([p[2] for p in parts])
        # depths are supervised in diameter units so the squared-residual
        # depth term is commensurate with the colour and mask terms and
        # lambda_d stays dimensionless
        inv_diam = 1.0 / model.diameter
        batch_targets = PretrainBatch(
            colour=None, mask=None, depth=None,
            target_colour=np.concatenate([p[1] for p in parts]),
            target_mask=target_mask,
            target_depth=np.concatenate([p[3] for p in parts]) * inv_diam,
            depth_valid=target_mask > 0.5,
        )

        def build(p):
            out = field.render_rays(p, origins, dirs, t0, t1, valid,
                                    mode="pretrain", samples=samples)
            batch_targets.colour = out["C"]
            batch_targets.mask = out["M"]
            batch_targets.depth = out["D"] * inv_diam
            return loss_pretrain(batch_targets, weights)

        tape = Tape(build)
        try:
            loss = float(tape.forward(field.params))
        except NonFiniteError as exc:
            raise TrainingDiverged(
                f"geometry pretraining diverged at step {step}: {exc}") from exc
        opt.step(tape.backward(1.0))
        if first_loss is None:
            first_loss = loss
        final_loss = loss
        if step % log_every == 0 or step == steps - 1:
            log.append({"step": step, "loss": loss})

    field.freeze_geometry()
    return {"log": log, "first_loss": first_loss, "final_loss": final_loss,
            "poses": poses}


def eval_geometry(field: NeuralField, model: ObjectModel, cam: Camera,
                  poses, k=None) -> dict:
    """Held-out mask IoU and foreground depth MAE against the oracle."""
    ious, maes = [], []
    for pose in poses:
        oracle = render_oracle(model, cam, pose, DEFAULT_LIGHT)
        out = field.render_image(cam, pose, mode="pretrain", k=k)
        pred_m = out["M"] > 0.5
        gt_m = oracle.mask > 0.5
        union = np.logical_or(pred_m, gt_m).sum()
        inter = np.logical_and(pred_m, gt_m).sum()
        ious.append(inter / union if union else 1.0)
        both = np.logical_and(pred_m, gt_m)
        if both.any():
            maes.append(float(np.mean(np.abs(out["D"][both] - oracle.depth[both]))))
    iou = float(np.mean(ious))
    mae = float(np.mean(maes)) if maes else float("inf")
    return {"iou": iou, "depth_mae": mae,
            "depth_mae_frac": mae / model.diameter}


def _patch_slices(view: RawView, rect):
    x0, y0, w, h = rect
    sl = (slice(y0, y0 + h), slice(x0, x0 + w))
    return {
        "obs": view.image[sl],
        "syn": view.syn_colour[sl],
        "mask": view.mask_trust[sl],
        "mask_syn": view.syn_mask[sl],
        "mask_pad": view.mask_pad[sl],
        "surf_x": view.surfel_x[sl],
        "surf_n": view.surfel_n[sl],
    }


def _render_batch(field, P, picks, precomp):
    """Render every patch in the batch against parameter accessor P."""
    outs = []
    betas = []
    sig_means = []
    for (v, rect), pre in zip(picks, precomp):
        out = field.render_rays(P, *pre["rays"], mode="train", view_id=v,
                                samples=pre["samples"],
                                geom_override=pre["geom"])
        p = rect[2]
        outs.append(F.reshape(out["C"], (1, p, p, 3)))
        betas.append(F.reshape(out["beta"], (1, p, p)))
        sig_means.append(out["sigma_t_mean"])
    colour = F.concat(outs, axis=0)
    beta = F.concat(betas, axis=0)
    sig = sig_means[0] * (1.0 / len(sig_means))
    for s in sig_means[1:]:
        sig = sig + s * (1.0 / len(sig_means))
    return colour, beta, sig


def train_texture(field: NeuralField, views: list[RawView], cam: Camera, *,
                  disc: Discriminator, fx: FeatureExtractor,
                  weights: LossWeights, steps: int, lr: float,
                  disc_lr_mult=2.0, patch_size=16, patch_batch=8,
                  disc_steps=1, gan_form="paper", rng: np.random.Generator,
                  log_every=100) -> dict:
    """Alternating discriminator/generator optimisation of the texture loss.

    The geometry branch must already be frozen; its bytes are audited before
    and after. Pose estimates are inputs, never optimised.
    """
    if any(n.startswith("geom.") for n in field.params.trainable_names()):
        raise FreezeViolation("geometry branch must be frozen before texture learning")
    geom_before = field.params.fingerprint("geom.")

    gen_opt = Adam(field.params, lr=lr)
    disc_opt = Adam(disc.params, lr=lr * disc_lr_mult)
    log = []
    saturation_events = 0
    streak = 0

    def make_batch(pred_colour, beta, sig_mean, picks, slices):
        return PatchBatch(
            pred_colour=pred_colour,
            obs_colour=np.stack([s["obs"] for s in slices]),
            syn_colour=np.stack([s["syn"] for s in slices]),
            mask=np.stack([s["mask"] for s in slices]),
            mask_syn=np.stack([s["mask_syn"] for s in slices]),
            mask_pad=np.stack([s["mask_pad"] for s in slices]),
            surfel_x=np.stack([s["surf_x"] for s in slices]),
            surfel_n=np.stack([s["surf_n"] for s in slices]),
            beta=beta,
            sigma_t_mean=sig_mean,
            view_ids=np.array([v for v, _ in picks]),
        ).validate()

    numpy_P = field.numpy_params()
    for step in range(steps):
        picks = []
        for _ in range(patch_batch):
            v = int(rng.integers(0, len(views)))
            picks.append((v, patch_rect(views[v], patch_size, cam, rng)))
        slices = [_patch_slices(views[v], rect) for v, rect in picks]
        precomp = []
        for v, rect in picks:
            rays = field.patch_rays(cam, views[v].pose_est, rect)
            samples = field.sample_rays(rays[2], rays[3], rays[4],
                                        field.cfg.samples_per_ray, True, rng)
            rb = field.bound_radius
            n_rays = len(rays[0])
            pts = rays[0][:, None, :] / rb + rays[1][:, None, :] * samples[0][:, :, None]
            sigma, gamma = field.geometry(numpy_P, pts.reshape(-1, 3))
            precomp.append({"rays": rays, "samples": samples,
                            "geom": (sigma, gamma)})

        # discriminator update(s) against the current renderer
        d_val = 0.0
        d_metrics = {"d_fake": float("nan"), "d_real": float("nan")}
        if weights.lambda_adv > 0 and disc_steps > 0:
            fake_np, beta_np, sig_np = _render_batch(field, numpy_P, picks, precomp)
            batch_np = make_batch(fake_np, beta_np, sig_np, picks, slices)
            for _ in range(disc_steps):
                def build_d(p):
                    return -loss_adv(batch_np, disc, "discriminator",
                                     disc_params=p, gan_form=gan_form)

                tape_d = Tape(build_d)
                try:
                    d_val = -float(tape_d.forward(disc.params))
                except NonFiniteError as exc:
                    raise TrainingDiverged(
                        f"discriminator diverged at step {step}: {exc}") from exc
                disc_opt.step(tape_d.backward(1.0))
            d_fake = F.value(disc.apply(disc.numpy_params(),
                                        _nchw_stack(batch_np, batch_np.pred_colour)))
            d_real = F.value(disc.apply(disc.numpy_params(),
                                        _nchw_stack(batch_np,
                                                    batch_np.mask[..., None]
                                                    * batch_np.obs_colour)))
            d_metrics = {"d_fake": float(d_fake.mean()),
                         "d_real": float(d_real.mean())}

            scores = np.concatenate([d_fake, d_real])
            frac_sat = float(np.mean((scores < 1e-4) | (scores > 1.0 - 1e-4)))
            streak = streak + 1 if frac_sat >= 0.95 else 0
            if streak == 100:
                saturation_events += 1
                warnings.warn("discriminator saturated for 100 consecutive steps")
                streak = 0

        # generator update through the full texture loss
        def build_g(p):
            colour, beta, sig = _render_batch(field, p, picks, precomp)
            batch = make_batch(colour, beta, sig, picks, slices)
            return loss_tex(batch, disc, fx, weights, gan_form=gan_form)

        tape_g = Tape(build_g)
        try:
            g_val = float(tape_g.forward(field.params))
        except NonFiniteError as exc:
            raise TrainingDiverged(
                f"texture learning diverged at step {step}: {exc}") from exc
        gen_opt.step(tape_g.backward(1.0))

        if step % log_every == 0 or step == steps - 1:
            log.append({"step": step, "loss_tex": g_val, "loss_disc": d_val,
                        **d_metrics})

    if field.params.fingerprint("geom.") != geom_before:
        raise FreezeViolation("geometry bytes changed during texture learning")
    return {"log": log, "saturation_events": saturation_events,
            "final_loss": log[-1]["loss_tex"] if log else None}


def _nchw_stack(batch: PatchBatch, colour):
    sx = np.transpose(batch.surfel_x, (0, 3, 1, 2))
    sn = np.transpose(batch.surfel_n, (0, 3, 1, 2))
    c = np.transpose(F.value(colour), (0, 3, 1, 2))
    return np.concatenate([sx, sn, c], axis=1)
