"""Experiment configuration: typed schema, INI-style file parsing, hashing,
and constructors for the objects each stage needs.

The config file is a plain-text key/value document with one [section] per
concern; unknown sections or keys are rejected and every value is coerced
through the schema.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from pathlib import Path

import numpy as np

from ..field.neural_field import FieldConfig
from ..geom.camera import Camera, default_camera
from ..geom.model import ObjectModel, make_object
from ..poselearn.estimator import CropSpec, EstimatorConfig
from ..texlearn.losses import LossWeights
from ..texlearn.viewdata import NoiseSpec


class ConfigError(ValueError):
    pass


def _int_list(value):
    if isinstance(value, (tuple, list)):
        return tuple(int(x) for x in value)
    return tuple(int(x) for x in str(value).replace(",", " ").split())


# section -> key -> (coercion, default)
SCHEMA = {
    "object": {
        "kind": (str, "blob"),
        "size": (float, 0.05),
        "subdivisions": (int, 3),
        "texture_seed": (int, 5),
        "bump": (float, 0.22),
    },
    "camera": {
        "resolution": (int, 64),
        "focal": (float, 190.0),
        "near": (float, 0.05),
        "far": (float, 5.0),
    },
    "views": {
        "count": (int, 40),
        "distance_min": (float, 0.40),
        "distance_max": (float, 0.50),
        "elevation_min_deg": (float, -35.0),
        "elevation_max_deg": (float, 35.0),
        "azimuth_min_deg": (float, 0.0),
        "azimuth_max_deg": (float, 360.0),
        "roll_max_deg": (float, 20.0),
        "light_jitter_deg": (float, 25.0),
    },
    "noise": {
        "rot_sigma_deg": (float, 5.0),
        "trans_frac": (float, 0.02),
        "mask_bite_count": (int, 3),
        "mask_bite_radius": (int, 2),
        "mask_boundary_amp": (int, 1),
    },
    "field": {
        "geom_depth": (int, 4),
        "geom_width": (int, 128),
        "feat_dim": (int, 64),
        "rgb_depth": (int, 2),
        "rgb_width": (int, 64),
        "levels_x": (int, 6),
        "levels_dir": (int, 2),
        "embed_dim": (int, 8),
        "samples_per_ray": (int, 32),
        "beta_min": (float, 0.03),
        "density_bias": (float, -4.5),
    },
    "loss": {
        "lambda_m": (float, 1.0),
        "lambda_d": (float, 0.5),
        "lambda_adv": (float, 0.05),
        "lambda_reg": (float, 0.1),
        "lambda_fg": (float, 1.0),
        "lambda_transient": (float, 0.01),
        "gan_form": (str, "paper"),
        "use_adv": (lambda v: str(v).lower() in ("1", "true", "yes"), True),
        "use_reg": (lambda v: str(v).lower() in ("1", "true", "yes"), True),
        "erosion_radius": (int, 1),
    },
    "train": {
        "pretrain_steps": (int, 2000),
        "pretrain_views": (int, 32),
        "pretrain_rays": (int, 512),
        "pretrain_lr": (float, 1e-3),
        "texture_steps": (int, 600),
        "texture_lr": (float, 1e-3),
        "disc_lr_mult": (float, 2.0),
        "disc_channels": (_int_list, (32, 64, 64, 64)),
        "patch_size": (int, 16),
        "patch_batch": (int, 8),
        "disc_steps": (int, 1),
        "synth_count": (int, 96),
        "estimator_pretrain_count": (int, 96),
        "estimator_pretrain_steps": (int, 800),
        "estimator_steps": (int, 800),
        "estimator_lr": (float, 1e-3),
        "batch_size": (int, 16),
        "loops": (int, 1),
        "refine_steps": (int, 60),
        "refine_lr": (float, 3e-3),
        "eval_cadence": (int, 10),
    },
    "estimator": {
        "input_size": (int, 64),
        "channels": (_int_list, (16, 32, 64, 64, 128)),
        "fc_dim": (int, 256),
        "mask_size": (int, 16),
        "crop_pad": (float, 1.5),
        "jitter_px": (float, 3.0),
        "lambda_mask": (float, 0.3),
    },
    "eval": {
        "test_views": (int, 48),
    },
    "run": {
        "seed": (int, 0),
        "data_fraction": (float, 1.0),
        "init_field_path": (str, ""),
    },
}

# keys that do not change results and stay out of the config hash
_NON_SEMANTIC = set()


class ExperimentConfig:
    """Validated nested key/value configuration for one experiment."""

    def __init__(self, values: dict):
        self._values = values

    def __getitem__(self, section: str) -> dict:
        return self._values[section]

    def get(self, section: str, key: str):
        return self._values[section][key]

    @classmethod
    def default(cls, **overrides) -> "ExperimentConfig":
        values = {s: {k: spec[1] for k, spec in keys.items()}
                  for s, keys in SCHEMA.items()}
        cfg = cls(values)
        for dotted, val in overrides.items():
            section, key = dotted.split("__")
            cfg.set(section, key, val)
        return cfg

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        cfg = cls.default()
        for section, keys in raw.items():
            for key, val in keys.items():
                cfg.set(section, key, val)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        read = parser.read(str(path))
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        raw = {s: dict(parser.items(s)) for s in parser.sections()}
        return cls.from_dict(raw)

    def set(self, section: str, key: str, value) -> None:
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        coerce = SCHEMA[section][key][0]
        try:
            self._values[section][key] = coerce(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {section}.{key}: {value!r}") from exc

    def validate(self) -> "ExperimentConfig":
        if self.get("loss", "gan_form") not in ("paper", "standard"):
            raise ConfigError("loss.gan_form must be 'paper' or 'standard'")
        if not 0 < self.get("run", "data_fraction") <= 1.0:
            raise ConfigError("run.data_fraction must be in (0, 1]")
        if self.get("train", "synth_count") <= 0:
            raise ConfigError("train.synth_count must be positive")
        for section, keys in self._values.items():
            for key, val in keys.items():
                if key.endswith("_path") and isinstance(val, str) and val:
                    if not Path(val).exists():
                        raise ConfigError(f"{section}.{key}: path {val!r} missing")
        return self

    def to_dict(self) -> dict:
        return {s: dict(keys) for s, keys in self._values.items()}

    def subset(self, selectors) -> dict:
        """Sections or dotted section.key selectors, for stage cache keys."""
        out = {}
        for sel in selectors:
            if "." in sel:
                section, key = sel.split(".")
                out.setdefault(section, {})[key] = self.get(section, key)
            else:
                out[sel] = dict(self._values[sel])
        return out

    def hash(self) -> str:
        payload = {s: {k: v for k, v in keys.items()
                       if f"{s}.{k}" not in _NON_SEMANTIC}
                   for s, keys in self._values.items()}
        return hashlib.sha256(
            json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()

    def save(self, path) -> None:
        lines = []
        for section, keys in self._values.items():
            lines.append(f"[{section}]")
            for key, val in keys.items():
                if isinstance(val, tuple):
                    val = ",".join(str(x) for x in val)
                lines.append(f"{key} = {val}")
            lines.append("")
        Path(path).write_text("\n".join(lines))

    # --- constructors -------------------------------------------------------

    def object_model(self) -> ObjectModel:
        kind = self.get("object", "kind")
        size = self.get("object", "size")
        if kind == "cube":
            return make_object(kind, side=size * 2)
        if kind == "cylinder":
            return make_object(kind, radius=size * 0.7, height=size * 1.8)
        kwargs = {"radius": size, "subdivisions": self.get("object", "subdivisions")}
        if kind == "blob":
            kwargs["seed"] = self.get("object", "texture_seed")
            kwargs["bump"] = self.get("object", "bump")
        return make_object(kind, **kwargs)

    def camera(self) -> Camera:
        return default_camera(self.get("camera", "resolution"),
                              self.get("camera", "focal"),
                              self.get("camera", "near"),
                              self.get("camera", "far"))

    def field_config(self) -> FieldConfig:
        return FieldConfig(**self._values["field"])

    def loss_weights(self) -> LossWeights:
        loss = self._values["loss"]
        return LossWeights(
            lambda_m=loss["lambda_m"],
            lambda_d=loss["lambda_d"],
            lambda_adv=loss["lambda_adv"] if loss["use_adv"] else 0.0,
            lambda_reg=loss["lambda_reg"] if loss["use_reg"] else 0.0,
            lambda_fg=loss["lambda_fg"],
            lambda_transient=loss["lambda_transient"],
        )

    def noise_spec(self, model: ObjectModel) -> NoiseSpec:
        n = self._values["noise"]
        return NoiseSpec(rot_sigma_deg=n["rot_sigma_deg"],
                         trans_sigma=n["trans_frac"] * model.diameter,
                         bite_count=n["mask_bite_count"],
                         bite_radius=n["mask_bite_radius"],
                         boundary_amp=n["mask_boundary_amp"])

    def estimator_config(self) -> EstimatorConfig:
        e = self._values["estimator"]
        return EstimatorConfig(input_size=e["input_size"], channels=e["channels"],
                               fc_dim=e["fc_dim"], mask_size=e["mask_size"])

    def crop_spec(self, cam: Camera, model: ObjectModel,
                  jitter: bool = True) -> CropSpec:
        z_nom = 0.5 * (self.get("views", "distance_min")
                       + self.get("views", "distance_max"))
        crop_px = int(round(self.get("camera", "focal") * model.diameter
                            * self.get("estimator", "crop_pad") / z_nom))
        crop_px = min(crop_px, cam.width)
        return CropSpec(crop_px=crop_px, z_nominal=z_nom,
                        jitter_px=self.get("estimator", "jitter_px") if jitter else 0.0)

    def distance_range(self):
        return (self.get("views", "distance_min"),
                self.get("views", "distance_max"))

    def elevation_range(self):
        return (self.get("views", "elevation_min_deg"),
                self.get("views", "elevation_max_deg"))

    def roll_range(self):
        r = self.get("views", "roll_max_deg")
        return (-r, r)

    def azimuth_range(self):
        return (self.get("views", "azimuth_min_deg"),
                self.get("views", "azimuth_max_deg"))
