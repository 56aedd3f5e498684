"""Full experiment runs: the texture/pose self-supervision alternation, the
render-and-compare baseline, and paired ablation grids."""

from __future__ import annotations

import copy
from pathlib import Path

import numpy as np

from .. import metrics as M
from ..geom.oracle import project_centre, render_oracle, DEFAULT_LIGHT
from ..poselearn.refine import refine_render_compare
from ..poselearn.synth import SynthDataset, SynthSample, synthesize_dataset
from ..poselearn.training import train_estimator
from ..texlearn.losses import erode, pad_mask
from ..texlearn.models import Discriminator, FeatureExtractor
from ..texlearn.training import FreezeViolation, train_texture
from ..texlearn.viewdata import RawView
from .config import ExperimentConfig
from .record import RunRecord, StageTimer
from .seeding import stream
from .stages import (
    fraction_count,
    pretrained_estimator,
    pretrained_geometry,
    test_views,
    views_with_noise,
)

LOSS_VARIANTS = (("none", False, False), ("adv", True, False),
                 ("reg", False, True), ("adv+reg", True, True))
DATA_FRACTIONS = (0.05, 0.1, 0.25, 0.5, 1.0)


def _audit(record: RunRecord, label: str, before: str, after: str):
    ok = before == after
    record.event(f"freeze-audit {label}: {'ok' if ok else 'VIOLATION'}")
    record.log("audit", label, 1.0 if ok else 0.0)
    if not ok:
        raise FreezeViolation(f"{label} changed bytes across a stage boundary")


def evaluate_estimator(est, views, model, cam, crop) -> dict:
    report = M.PoseErrorReport()
    for view in views:
        centre = project_centre(cam, view.pose_gt)
        pred, _ = est.estimate(view.image, cam, centre, crop)
        report.record(pred, view.pose_gt, model)
    symmetric = len(model.symmetry_group) > 1
    return {
        "report": report,
        "add_acc": M.add_accuracy(report, model, 0.10, symmetric=symmetric),
        "add_mean": float(np.mean(report.add_s if symmetric else report.add)),
        "rot_mean_deg": float(np.mean(report.rot_deg)),
        "trans_mean": float(np.mean(report.trans)),
    }


def texture_psnr(field, model, cam, views, max_views=6) -> float:
    """Synthesis-mode render quality against clean oracle foregrounds."""
    scores = []
    for view in views[:max_views]:
        clean = render_oracle(model, cam, view.pose_gt, view.light)
        out = field.render_image(cam, view.pose_gt, mode="synthesis")
        fg = clean.mask > 0.5
        if fg.sum() < 8:
            continue
        scores.append(M.psnr(out["C"][fg], clean.colour[fg]))
    return float(np.mean(scores)) if scores else float("nan")


def reestimate_views(views, est, model, cam, crop, erosion_radius):
    """Loop re-entry: pose inits and masks refreshed from the trained
    estimator's own predictions."""
    out = []
    for view in views:
        v = copy.copy(view)
        centre = project_centre(cam, view.pose_gt)
        pose, mask = est.estimate(view.image, cam, centre, crop)
        v.pose_est = pose
        v.mask_pred = (mask > 0.5).astype(np.float64)
        v.mask_trust = erode(v.mask_pred, erosion_radius)
        syn = render_oracle(model, cam, pose, DEFAULT_LIGHT)
        v.syn_colour = syn.colour
        v.syn_mask = syn.mask
        v.surfel_x = syn.surfel_x
        v.surfel_n = syn.surfel_n
        v.mask_pad = pad_mask(v.mask_pred, v.syn_mask, erosion_radius)
        out.append(v)
    return out


def run_selfsup(cfg: ExperimentConfig, seed=None, out_dir=None, memo=None,
                resume=False) -> RunRecord:
    """The full alternation: raw views, estimator pretraining, pose
    initialisation, geometric pretraining, texture learning, synthesis,
    estimator training, evaluation."""
    cfg.validate()
    seed = cfg.get("run", "seed") if seed is None else int(seed)
    record = RunRecord(cfg.hash(), seed)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(out_dir / "config.ini")
    model = cfg.object_model()
    cam = cfg.camera()
    crop = cfg.crop_spec(cam, model)

    with StageTimer(record, "raw"):
        views = views_with_noise(cfg, seed, memo)
    with StageTimer(record, "est_pre"):
        ckpt = out_dir / "estimator_pretrained.ckpt" if out_dir else None
        if resume and ckpt and ckpt.exists():
            from ..poselearn.estimator import PoseEstimator
            est = PoseEstimator.load(ckpt)
        else:
            est, pre_metrics = pretrained_estimator(cfg, seed, memo)
            record.log("est_pre", "first_loss", pre_metrics["first_loss"])
            record.log("est_pre", "final_loss", pre_metrics["final_loss"])
            if ckpt:
                est.save(ckpt)
    est_before = est.copy()

    with StageTimer(record, "geo_pre"):
        ckpt = out_dir / "field_pretrained.ckpt" if out_dir else None
        if resume and ckpt and ckpt.exists():
            from ..field.neural_field import NeuralField
            field0 = NeuralField.load(ckpt)
        else:
            field0, geo_metrics = pretrained_geometry(cfg, seed, memo)
            record.log("geo_pre", "iou", geo_metrics["fidelity"]["iou"])
            record.log("geo_pre", "depth_mae", geo_metrics["fidelity"]["depth_mae"])
            record.log("geo_pre", "depth_mae_frac",
                       geo_metrics["fidelity"]["depth_mae_frac"])
            if ckpt:
                field0.save(ckpt)
    geom_print = field0.params.fingerprint("geom.")
    est_print = est.fingerprint()

    n_use = fraction_count(cfg)
    use_views = views[:n_use]
    record.log("raw", "views_used", n_use)
    weights = cfg.loss_weights()
    fx = FeatureExtractor(seed=0)

    loops = cfg.get("train", "loops")
    field = field0
    for loop in range(loops):
        suffix = "" if loop == 0 else f"/loop{loop}"
        if loop > 0:
            field = field0.clone()
            use_views = reestimate_views(use_views, est, model, cam, crop,
                                         cfg.get("loss", "erosion_radius"))

        with StageTimer(record, "texture" + suffix):
            ckpt = out_dir / f"field_textured{loop}.ckpt" if out_dir else None
            if resume and ckpt and ckpt.exists() and loop == 0:
                from ..field.neural_field import NeuralField
                field = NeuralField.load(ckpt)
            else:
                disc = Discriminator(patch_size=cfg.get("train", "patch_size"),
                                     channels=cfg.get("train", "disc_channels"),
                                     rng=stream(seed, "disc_init" + suffix))
                tex = train_texture(
                    field, use_views, cam, disc=disc, fx=fx, weights=weights,
                    steps=cfg.get("train", "texture_steps"),
                    lr=cfg.get("train", "texture_lr"),
                    disc_lr_mult=cfg.get("train", "disc_lr_mult"),
                    patch_size=cfg.get("train", "patch_size"),
                    patch_batch=cfg.get("train", "patch_batch"),
                    disc_steps=cfg.get("train", "disc_steps"),
                    gan_form=cfg.get("loss", "gan_form"),
                    rng=stream(seed, "texture" + suffix))
                record.log("texture", "final_loss", tex["final_loss"],
                           step=loop)
                record.log("texture", "saturation_events",
                           tex["saturation_events"], step=loop)
                if out_dir:
                    _write_csv(out_dir / f"texture_log{loop}.csv", tex["log"])
                if ckpt:
                    field.save(ckpt)
            _audit(record, "geometry-frozen-in-texture", geom_print,
                   field.params.fingerprint("geom."))
            _audit(record, "estimator-frozen-in-texture", est_print,
                   est.fingerprint())
            record.log("texture", "psnr",
                       texture_psnr(field, model, cam, use_views), step=loop)

        with StageTimer(record, "synth" + suffix):
            dataset = synthesize_dataset(
                field, cam, cfg.get("train", "synth_count"),
                stream(seed, "synth" + suffix),
                distance_range=cfg.distance_range(),
                elevation_range_deg=cfg.elevation_range(),
                azimuth_range_deg=cfg.azimuth_range(),
                roll_range_deg=cfg.roll_range(),
                seed=seed, raw_count=n_use)
            if out_dir:
                dataset.save(out_dir / f"synth{loop}")
                record.artifacts[f"synth{loop}"] = str(out_dir / f"synth{loop}")

        with StageTimer(record, "pose_train" + suffix):
            field_print = field.params.fingerprint()
            train = train_estimator(
                est, dataset, model, crop,
                steps=cfg.get("train", "estimator_steps"),
                batch_size=cfg.get("train", "batch_size"),
                lr=cfg.get("train", "estimator_lr"),
                rng=stream(seed, "pose_train" + suffix),
                lambda_mask=cfg.get("estimator", "lambda_mask"))
            record.log("pose_train", "first_loss", train["first_loss"], step=loop)
            record.log("pose_train", "final_loss", train["final_loss"], step=loop)
            _audit(record, "field-frozen-in-pose-train", field_print,
                   field.params.fingerprint())

    with StageTimer(record, "eval"):
        tviews = test_views(cfg, seed, memo)
        eval_crop = cfg.crop_spec(cam, model, jitter=False)
        before = evaluate_estimator(est_before, tviews, model, cam, eval_crop)
        after = evaluate_estimator(est, tviews, model, cam, eval_crop)
        record.log("eval", "add_acc_before", before["add_acc"])
        record.log("eval", "add_acc_after", after["add_acc"])
        record.log("eval", "add_mean_before", before["add_mean"])
        record.log("eval", "add_mean_after", after["add_mean"])
        record.log("eval", "rot_mean_deg_after", after["rot_mean_deg"])
        record.log("eval", "trans_mean_after", after["trans_mean"])
        record.log("eval", "gain", after["add_acc"] - before["add_acc"])
        if out_dir:
            from ..reporting import contact_sheet
            contact_sheet(out_dir / "contact_sheet.png", model, cam, field,
                          est, tviews, eval_crop)
            record.artifacts["contact_sheet"] = str(out_dir / "contact_sheet.png")

    if out_dir:
        est.save(out_dir / "estimator_final.ckpt")
        record.artifacts["estimator_final"] = str(out_dir / "estimator_final.ckpt")
        record.save(out_dir / "record.json")
    return record


def run_baseline(cfg: ExperimentConfig, seed=None, out_dir=None,
                 memo=None) -> RunRecord:
    """Render-and-compare pseudo-label refinement feeding the pose loss, with
    the accuracy curve evaluated every few estimator updates."""
    cfg.validate()
    seed = cfg.get("run", "seed") if seed is None else int(seed)
    record = RunRecord(cfg.hash(), seed)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    model = cfg.object_model()
    cam = cfg.camera()
    crop = cfg.crop_spec(cam, model)

    with StageTimer(record, "raw"):
        views = views_with_noise(cfg, seed, memo)
    with StageTimer(record, "est_pre"):
        est, _ = pretrained_estimator(cfg, seed, memo)
    est_before = est.copy()
    with StageTimer(record, "geo_pre"):
        field, _ = pretrained_geometry(cfg, seed, memo)

    n_use = fraction_count(cfg)
    use_views = views[:n_use]

    with StageTimer(record, "refine"):
        refined_poses = []
        traces = []
        diverged = 0
        for view in use_views:
            pose, trace, div = refine_render_compare(
                field, cam, view.pose_est, view.image, view.mask_pred,
                steps=cfg.get("train", "refine_steps"),
                lr=cfg.get("train", "refine_lr"),
                gt_pose=view.pose_gt, model=model)
            refined_poses.append(pose)
            traces.append(trace)
            diverged += int(div)
        min_len = min(len(t) for t in traces)
        mean_trace = [float(np.mean([t[i] for t in traces]))
                      for i in range(min_len)]
        for i, err in enumerate(mean_trace):
            record.log("refine", "mean_pose_error", err, step=i)
        record.log("refine", "trace_start", mean_trace[0])
        record.log("refine", "trace_end", mean_trace[-1])
        record.log("refine", "diverged_count", diverged)

    with StageTimer(record, "baseline_train"):
        pseudo = SynthDataset(
            samples=[SynthSample(image=v.image, pose=p, mask=v.mask_pred)
                     for v, p in zip(use_views, refined_poses)],
            camera=cam, seed=seed, source="render-compare", raw_count=n_use)
        tviews = test_views(cfg, seed, memo)
        eval_crop = cfg.crop_spec(cam, model, jitter=False)

        def eval_fn(current):
            out = evaluate_estimator(current, tviews, model, cam, eval_crop)
            return {"add_acc": out["add_acc"], "add_mean": out["add_mean"]}

        train = train_estimator(
            est, pseudo, model, crop,
            steps=cfg.get("train", "estimator_steps"),
            batch_size=min(cfg.get("train", "batch_size"), len(pseudo)),
            lr=cfg.get("train", "estimator_lr"),
            rng=stream(seed, "baseline_train"),
            lambda_mask=cfg.get("estimator", "lambda_mask"),
            eval_every=cfg.get("train", "eval_cadence"), eval_fn=eval_fn)
        record.curve = train["curve"]

    with StageTimer(record, "eval"):
        before = evaluate_estimator(est_before, tviews, model, cam, eval_crop)
        after = evaluate_estimator(est, tviews, model, cam, eval_crop)
        record.log("eval", "add_acc_before", before["add_acc"])
        record.log("eval", "add_acc_after", after["add_acc"])
        record.log("eval", "add_mean_before", before["add_mean"])
        record.log("eval", "add_mean_after", after["add_mean"])
        record.log("eval", "gain", after["add_acc"] - before["add_acc"])

    if out_dir:
        _write_csv(out_dir / "baseline_curve.csv", record.curve)
        record.save(out_dir / "record.json")
    return record


def run_ablation(cfg: ExperimentConfig, axis: str, seeds, out_dir=None,
                 memo=None):
    """Grid of paired runs along one ablation axis; all runs with the same
    seed share raw views, noise draws and pretrained checkpoints."""
    if axis not in ("loss_terms", "data_fraction"):
        raise ValueError(f"unknown ablation axis {axis!r}")
    memo = {} if memo is None else memo
    out_dir = Path(out_dir) if out_dir else None
    records = {}
    rows = []
    if axis == "loss_terms":
        grid = [(name, {"loss__use_adv": adv, "loss__use_reg": reg})
                for name, adv, reg in LOSS_VARIANTS]
    else:
        grid = [(f"frac={f}", {"run__data_fraction": f}) for f in DATA_FRACTIONS]
    for name, overrides in grid:
        variant = ExperimentConfig.from_dict(cfg.to_dict())
        for dotted, val in overrides.items():
            section, key = dotted.split("__")
            variant.set(section, key, val)
        for seed in seeds:
            rec = run_selfsup(variant, seed=seed, memo=memo,
                              out_dir=(out_dir / f"{name.replace('=', '_')}_s{seed}"
                                       if out_dir else None))
            records[(name, seed)] = rec
            rows.append({
                "variant": name, "seed": seed,
                "add_acc_before": rec.value("eval", "add_acc_before"),
                "add_acc_after": rec.value("eval", "add_acc_after"),
                "gain": rec.value("eval", "gain"),
            })
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(out_dir / f"ablation_{axis}.csv", rows)
    return records, rows


def _write_csv(path, rows):
    if not rows:
        Path(path).write_text("\n")
        return
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(c)) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)
