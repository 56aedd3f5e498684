"""Command-line interface.

    texpose <subcommand> --config cfg.ini [--seed K] [--out DIR]

Subcommands: pretrain-geom, learn-texture, synthesize, train-pose, selfsup,
baseline, ablate, render, eval.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path


def _common(sub):
    sub.add_argument("--config", required=True, help="experiment config file")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the [run] seed")
    sub.add_argument("--out", default="runs/out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="texpose",
        description="Self-supervised 6D pose learning via neural textures")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("pretrain-geom", "fit the field's geometry branch to oracle renders"),
        ("learn-texture", "adversarial texture learning from noisy poses"),
        ("synthesize", "render a perfect-label training set from the field"),
        ("train-pose", "train the pose estimator on a synthesised dataset"),
        ("selfsup", "run the full self-supervision pipeline"),
        ("baseline", "run the render-and-compare baseline"),
        ("ablate", "run an ablation grid"),
        ("render", "dump colour/depth/mask images for a pose grid"),
        ("eval", "evaluate an estimator checkpoint on held-out views"),
    ]:
        sub = subs.add_parser(name, help=text)
        _common(sub)
        if name == "ablate":
            sub.add_argument("--axis", choices=["loss_terms", "data_fraction"],
                             default="loss_terms")
            sub.add_argument("--seeds", type=int, nargs="+", default=None)
        if name in ("learn-texture", "synthesize", "render"):
            sub.add_argument("--field", default=None,
                             help="field checkpoint (default: <out>/field_*.ckpt)")
        if name in ("train-pose",):
            sub.add_argument("--dataset", default=None,
                             help="dataset directory (default: <out>/synth0)")
        if name == "eval":
            sub.add_argument("--estimator", default=None,
                             help="estimator checkpoint (default: <out>/estimator_final.ckpt)")
        if name == "render":
            sub.add_argument("--n-poses", type=int, default=8)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    # heavyweight imports after arg parsing so --help stays instant
    import numpy as np
    from .pipeline import ExperimentConfig, run_ablation, run_baseline, run_selfsup
    from .pipeline.seeding import stream
    from .reporting import emit_report

    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.set("run", "seed", args.seed)
    seed = cfg.get("run", "seed")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "selfsup":
        record = run_selfsup(cfg, seed=seed, out_dir=out)
        emit_report(record, out)
        print(f"selfsup: ADD@10% {record.value('eval', 'add_acc_before'):.1f}"
              f" -> {record.value('eval', 'add_acc_after'):.1f}")
        return 0

    if args.command == "baseline":
        record = run_baseline(cfg, seed=seed, out_dir=out)
        emit_report(record, out)
        print(f"baseline: ADD@10% {record.value('eval', 'add_acc_before'):.1f}"
              f" -> {record.value('eval', 'add_acc_after'):.1f}")
        return 0

    if args.command == "ablate":
        seeds = args.seeds or [seed]
        _, rows = run_ablation(cfg, args.axis, seeds, out_dir=out)
        for row in rows:
            print(f"{row['variant']:>10} seed={row['seed']}: "
                  f"ADD@10% after = {row['add_acc_after']:.1f}")
        return 0

    if args.command == "pretrain-geom":
        from .pipeline.stages import pretrained_geometry
        field, metrics = pretrained_geometry(cfg, seed)
        field.save(out / "field_pretrained.ckpt")
        print(f"pretrain-geom: held-out IoU {metrics['fidelity']['iou']:.3f}, "
              f"depth MAE {metrics['fidelity']['depth_mae_frac'] * 100:.2f}% "
              f"of diameter -> {out / 'field_pretrained.ckpt'}")
        return 0

    if args.command == "learn-texture":
        from .field.neural_field import NeuralField
        from .pipeline.stages import views_with_noise, fraction_count
        from .texlearn.models import Discriminator, FeatureExtractor
        from .texlearn.training import train_texture
        path = args.field or out / "field_pretrained.ckpt"
        field = NeuralField.load(path)
        views = views_with_noise(cfg, seed)[: fraction_count(cfg)]
        disc = Discriminator(patch_size=cfg.get("train", "patch_size"),
                             channels=cfg.get("train", "disc_channels"),
                             rng=stream(seed, "disc_init"))
        metrics = train_texture(
            field, views, cfg.camera(), disc=disc, fx=FeatureExtractor(seed=0),
            weights=cfg.loss_weights(), steps=cfg.get("train", "texture_steps"),
            lr=cfg.get("train", "texture_lr"),
            disc_lr_mult=cfg.get("train", "disc_lr_mult"),
            patch_size=cfg.get("train", "patch_size"),
            patch_batch=cfg.get("train", "patch_batch"),
            disc_steps=cfg.get("train", "disc_steps"),
            gan_form=cfg.get("loss", "gan_form"),
            rng=stream(seed, "texture"))
        field.save(out / "field_textured0.ckpt")
        print(f"learn-texture: final loss {metrics['final_loss']:.4f} "
              f"-> {out / 'field_textured0.ckpt'}")
        return 0

    if args.command == "synthesize":
        from .field.neural_field import NeuralField
        from .poselearn.synth import synthesize_dataset
        path = args.field or out / "field_textured0.ckpt"
        field = NeuralField.load(path)
        dataset = synthesize_dataset(
            field, cfg.camera(), cfg.get("train", "synth_count"),
            stream(seed, "synth"), distance_range=cfg.distance_range(),
            elevation_range_deg=cfg.elevation_range(),
            azimuth_range_deg=cfg.azimuth_range(),
            roll_range_deg=cfg.roll_range(), seed=seed,
            raw_count=cfg.get("views", "count"))
        dataset.save(out / "synth0")
        print(f"synthesize: {len(dataset)} samples -> {out / 'synth0'}")
        return 0

    if args.command == "train-pose":
        from .pipeline.stages import pretrained_estimator
        from .poselearn.synth import SynthDataset
        from .poselearn.training import train_estimator
        dataset = SynthDataset.load(args.dataset or out / "synth0")
        est, _ = pretrained_estimator(cfg, seed)
        model = cfg.object_model()
        metrics = train_estimator(
            est, dataset, model, cfg.crop_spec(dataset.camera, model),
            steps=cfg.get("train", "estimator_steps"),
            batch_size=cfg.get("train", "batch_size"),
            lr=cfg.get("train", "estimator_lr"),
            rng=stream(seed, "pose_train"),
            lambda_mask=cfg.get("estimator", "lambda_mask"))
        est.save(out / "estimator_final.ckpt")
        print(f"train-pose: loss {metrics['first_loss']:.4f} -> "
              f"{metrics['final_loss']:.4f}; saved estimator_final.ckpt")
        return 0

    if args.command == "render":
        from .field.neural_field import NeuralField
        from .geom.io import save_pfm, save_png
        from .geom.pose import sample_view_sphere
        path = args.field or out / "field_textured0.ckpt"
        field = NeuralField.load(path)
        cam = cfg.camera()
        rng = stream(seed, "render-grid")
        for i in range(args.n_poses):
            pose = sample_view_sphere(rng, cfg.distance_range(),
                                      cfg.elevation_range())
            img = field.render_image(cam, pose, mode="synthesis")
            save_png(out / f"render_{i:03d}_colour.png", img["C"])
            save_png(out / f"render_{i:03d}_mask.png", img["M"])
            save_pfm(out / f"render_{i:03d}_depth.pfm", img["D"])
        print(f"render: {args.n_poses} poses -> {out}")
        return 0

    if args.command == "eval":
        from .pipeline.runs import evaluate_estimator
        from .pipeline.stages import test_views
        from .poselearn.estimator import PoseEstimator
        path = args.estimator or out / "estimator_final.ckpt"
        est = PoseEstimator.load(path)
        model = cfg.object_model()
        cam = cfg.camera()
        tviews = test_views(cfg, seed)
        result = evaluate_estimator(est, tviews, model, cam,
                                    cfg.crop_spec(cam, model, jitter=False))
        lines = ["metric,value",
                 f"add_acc,{result['add_acc']!r}",
                 f"add_mean,{result['add_mean']!r}",
                 f"rot_mean_deg,{result['rot_mean_deg']!r}",
                 f"trans_mean,{result['trans_mean']!r}"]
        (out / "eval.csv").write_text("\n".join(lines) + "\n")
        print(f"eval: ADD@10% = {result['add_acc']:.1f} on {len(tviews)} views")
        return 0

    raise SystemExit(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
