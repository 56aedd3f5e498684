"""Dataset synthesis: perfect-label renders from the trained field (and the
flat-shaded oracle variant used for estimator pretraining)."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from ..geom.camera import Camera
from ..geom.io import load_png, save_png
from ..geom.model import ObjectModel
from ..geom.oracle import flat_render
from ..geom.pose import Pose, sample_view_sphere
from ..field.neural_field import NeuralField
from ..texlearn.viewdata import random_background


class SynthesisError(RuntimeError):
    pass


@dataclass
class SynthSample:
    image: np.ndarray     # (H, W, 3), object over a random background
    pose: Pose            # the exact pose used for rendering
    mask: np.ndarray      # (H, W) rendered opacity


@dataclass
class SynthDataset:
    samples: list
    camera: Camera
    seed: int
    source: str = "field"          # field checkpoint fingerprint or "oracle-flat"
    raw_count: int = 0             # N of the raw split this dataset supervises

    def __len__(self):
        return len(self.samples)

    def save(self, directory):
        """PNG per image plus a plain-text metadata record per sample."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        cam = self.camera
        (directory / "dataset.txt").write_text(
            f"count: {len(self.samples)}\nseed: {self.seed}\n"
            f"source: {self.source}\nraw_count: {self.raw_count}\n")
        for i, s in enumerate(self.samples):
            save_png(directory / f"img_{i:04d}.png", s.image)
            save_png(directory / f"mask_{i:04d}.png", s.mask)
            rows = [" ".join(f"{x:.17g}" for x in row) for row in s.pose.rotation]
            meta = [
                "rotation: " + " | ".join(rows),
                "translation: " + " ".join(f"{x:.17g}" for x in s.pose.translation),
                f"camera: {cam.fx:.17g} {cam.fy:.17g} {cam.cx:.17g} {cam.cy:.17g} "
                f"{cam.width} {cam.height} {cam.near:.17g} {cam.far:.17g}",
                f"index: {i}",
            ]
            (directory / f"img_{i:04d}.meta").write_text("\n".join(meta) + "\n")

    @classmethod
    def load(cls, directory) -> "SynthDataset":
        directory = Path(directory)
        header = dict(
            line.split(": ", 1)
            for line in (directory / "dataset.txt").read_text().splitlines())
        count = int(header["count"])
        samples = []
        cam = None
        for i in range(count):
            meta = dict(
                line.split(": ", 1)
                for line in (directory / f"img_{i:04d}.meta").read_text().splitlines())
            rot = np.array([[float(x) for x in row.split()]
                            for row in meta["rotation"].split(" | ")])
            trans = np.array([float(x) for x in meta["translation"].split()])
            c = meta["camera"].split()
            cam = Camera(float(c[0]), float(c[1]), float(c[2]), float(c[3]),
                         int(c[4]), int(c[5]), float(c[6]), float(c[7]))
            image = load_png(directory / f"img_{i:04d}.png")
            mask = load_png(directory / f"mask_{i:04d}.png")
            samples.append(SynthSample(image=image, pose=Pose(rot, trans),
                                       mask=mask))
        return cls(samples=samples, camera=cam, seed=int(header["seed"]),
                   source=header["source"], raw_count=int(header["raw_count"]))


def widen_range(rng_pair, factor):
    lo, hi = rng_pair
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * (1.0 + factor)
    return (mid - half, mid + half)


def synthesize_dataset(field: NeuralField, cam: Camera, n: int,
                       rng: np.random.Generator, *, distance_range,
                       elevation_range_deg=(-35.0, 35.0),
                       azimuth_range_deg=(0.0, 360.0),
                       roll_range_deg=(-180.0, 180.0), widen=0.2,
                       k=None, seed=0, raw_count=0) -> SynthDataset:
    """Render n perfect-label samples from the frozen field over random
    backgrounds, with poses drawn from the raw-view shell widened by 20%."""
    dist = widen_range(distance_range, widen)
    dist = (max(dist[0], 1e-3), dist[1])
    elev = widen_range(elevation_range_deg, widen)
    azim = widen_range(azimuth_range_deg, widen)         if azimuth_range_deg != (0.0, 360.0) else azimuth_range_deg
    roll = widen_range(roll_range_deg, widen)
    samples = []
    for i in range(n):
        pose = sample_view_sphere(rng, dist, elev, azimuth_range_deg=azim,
                                  roll_range_deg=roll)
        out = field.render_image(cam, pose, mode="synthesis", k=k)
        mask = np.clip(out["M"], 0.0, 1.0)
        if mask.max() < 0.1:
            raise SynthesisError(
                f"synthesis sample {i}: field rendered an all-empty mask "
                f"(max opacity {mask.max():.4f}); the object was lost")
        bg = random_background(rng, cam.height, cam.width)
        image = np.clip(out["C"] + (1.0 - mask[..., None]) * bg, 0.0, 1.0)
        samples.append(SynthSample(image=image, pose=pose, mask=mask))
    return SynthDataset(samples=samples, camera=cam, seed=seed,
                        source=field.params.fingerprint()[:16],
                        raw_count=raw_count)


def synthesize_pretrain_dataset(model: ObjectModel, cam: Camera, n: int,
                                rng: np.random.Generator, *, distance_range,
                                elevation_range_deg=(-35.0, 35.0),
                                azimuth_range_deg=(0.0, 360.0),
                                roll_range_deg=(-180.0, 180.0),
                                seed=0) -> SynthDataset:
    """Flat-shaded uniform-grey oracle renders over random backgrounds: the
    impoverished synthetic domain the estimator is pretrained on."""
    samples = []
    for _ in range(n):
        pose = sample_view_sphere(rng, distance_range, elevation_range_deg,
                                  azimuth_range_deg=azimuth_range_deg,
                                  roll_range_deg=roll_range_deg)
        render = flat_render(model, cam, pose)
        bg = random_background(rng, cam.height, cam.width)
        m = render.mask[..., None]
        image = render.colour * m + bg * (1.0 - m)
        samples.append(SynthSample(image=image, pose=pose, mask=render.mask))
    return SynthDataset(samples=samples, camera=cam, seed=seed,
                        source="oracle-flat", raw_count=0)
