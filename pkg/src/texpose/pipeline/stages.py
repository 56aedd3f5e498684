"""Pipeline stages with in-process memoisation.

Stage results are memoised on (stage name, the config subset the stage
actually reads, seed), so grid runs that must share raw data, noise draws or
pretrained checkpoints do share them, while anything the variant changes is
recomputed. Memoised objects are treated as pristine: stages hand out copies
of anything a downstream consumer mutates.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from ..field.neural_field import NeuralField
from ..geom.pose import sample_view_sphere
from ..poselearn.estimator import PoseEstimator
from ..poselearn.synth import synthesize_pretrain_dataset
from ..poselearn.training import train_estimator
from ..texlearn.training import eval_geometry, train_geometry
from ..texlearn.viewdata import build_raw_views, prepare_texture_views
from .config import ExperimentConfig
from .seeding import stream

_RAW_KEYS = ("object", "camera", "views")
_NOISE_KEYS = _RAW_KEYS + ("noise", "loss.erosion_radius")
_EST_PRE_KEYS = ("object", "camera", "views", "estimator",
                 "train.estimator_pretrain_count",
                 "train.estimator_pretrain_steps", "train.estimator_lr",
                 "train.batch_size")
_GEO_KEYS = ("object", "camera", "views.distance_min", "views.distance_max",
             "views.elevation_min_deg", "views.elevation_max_deg", "field",
             "train.pretrain_steps", "train.pretrain_views",
             "train.pretrain_rays", "train.pretrain_lr",
             "loss.lambda_m", "loss.lambda_d")
_TEST_KEYS = ("object", "camera", "views", "eval")


def stage_key(name: str, cfg: ExperimentConfig, selectors, seed: int) -> str:
    payload = json.dumps(cfg.subset(selectors), sort_keys=True, default=str)
    return f"{name}:{seed}:" + hashlib.sha256(payload.encode()).hexdigest()[:24]


def memoised(memo, key, compute):
    if memo is None:
        return compute()
    if key not in memo:
        memo[key] = compute()
    return memo[key]


def views_with_noise(cfg: ExperimentConfig, seed: int, memo=None):
    """Raw views plus pose noise, corrupted masks, surfels and synthetic
    renders, for the full raw split (fraction subsets slice this list)."""

    def compute():
        model = cfg.object_model()
        cam = cfg.camera()
        views = build_raw_views(
            model, cam, cfg.get("views", "count"), stream(seed, "raw"),
            distance_range=cfg.distance_range(),
            elevation_range_deg=cfg.elevation_range(),
            azimuth_range_deg=cfg.azimuth_range(),
            roll_range_deg=cfg.roll_range(),
            light_jitter_deg=cfg.get("views", "light_jitter_deg"))
        prepare_texture_views(model, cam, views, stream(seed, "noise"),
                              cfg.noise_spec(model),
                              erosion_radius=cfg.get("loss", "erosion_radius"))
        return views

    return memoised(memo, stage_key("views", cfg, _NOISE_KEYS, seed), compute)


def pretrained_estimator(cfg: ExperimentConfig, seed: int, memo=None):
    """Estimator trained on the flat-shaded synthetic domain; returns a copy
    per call plus its training metrics."""

    def compute():
        model = cfg.object_model()
        cam = cfg.camera()
        dataset = synthesize_pretrain_dataset(
            model, cam, cfg.get("train", "estimator_pretrain_count"),
            stream(seed, "est_pre_data"), distance_range=cfg.distance_range(),
            elevation_range_deg=cfg.elevation_range(),
            azimuth_range_deg=cfg.azimuth_range(),
            roll_range_deg=cfg.roll_range(), seed=seed)
        est = PoseEstimator(cfg.estimator_config(), rng=stream(seed, "est_init"))
        metrics = train_estimator(
            est, dataset, model, cfg.crop_spec(cam, model),
            steps=cfg.get("train", "estimator_pretrain_steps"),
            batch_size=cfg.get("train", "batch_size"),
            lr=cfg.get("train", "estimator_lr"),
            rng=stream(seed, "est_pre_train"),
            lambda_mask=cfg.get("estimator", "lambda_mask"))
        return est, metrics

    est, metrics = memoised(memo, stage_key("est_pre", cfg, _EST_PRE_KEYS, seed),
                            compute)
    return est.copy(), metrics


def pretrained_geometry(cfg: ExperimentConfig, seed: int, memo=None):
    """Geometry-pretrained field (frozen) plus held-out fidelity metrics;
    returns a fresh clone per call."""

    def compute():
        model = cfg.object_model()
        cam = cfg.camera()
        init_path = cfg.get("run", "init_field_path")
        if init_path:
            field = NeuralField.load(init_path)
            info = {"first_loss": float("nan"), "final_loss": float("nan")}
        else:
            field = NeuralField(cfg.field_config(),
                                n_views=cfg.get("views", "count"),
                                bound_radius=model.bound_radius * 1.05,
                                rng=stream(seed, "field_init"))
            info = train_geometry(
                field, model, cam,
                steps=cfg.get("train", "pretrain_steps"),
                n_views=cfg.get("train", "pretrain_views"),
                rays_per_step=cfg.get("train", "pretrain_rays"),
                lr=cfg.get("train", "pretrain_lr"),
                weights=cfg.loss_weights(), rng=stream(seed, "geo_pre"),
                distance_range=cfg.distance_range(),
                elevation_range_deg=cfg.elevation_range())
        holdout_rng = stream(seed, "geo_eval")
        holdout = [sample_view_sphere(holdout_rng, cfg.distance_range(),
                                      cfg.elevation_range())
                   for _ in range(6)]
        fidelity = eval_geometry(field, model, cam, holdout,
                                 k=2 * cfg.get("field", "samples_per_ray"))
        return field, {"train": info, "fidelity": fidelity}

    field, metrics = memoised(memo, stage_key("geo_pre", cfg, _GEO_KEYS, seed),
                              compute)
    return field.clone(), metrics


def test_views(cfg: ExperimentConfig, seed: int, memo=None):
    """Held-out evaluation views from the raw distribution."""

    def compute():
        model = cfg.object_model()
        cam = cfg.camera()
        return build_raw_views(
            model, cam, cfg.get("eval", "test_views"), stream(seed, "eval"),
            distance_range=cfg.distance_range(),
            elevation_range_deg=cfg.elevation_range(),
            azimuth_range_deg=cfg.azimuth_range(),
            roll_range_deg=cfg.roll_range(),
            light_jitter_deg=cfg.get("views", "light_jitter_deg"))

    return memoised(memo, stage_key("test", cfg, _TEST_KEYS, seed), compute)


def fraction_count(cfg: ExperimentConfig) -> int:
    frac = cfg.get("run", "data_fraction")
    return max(1, math.ceil(frac * cfg.get("views", "count")))
