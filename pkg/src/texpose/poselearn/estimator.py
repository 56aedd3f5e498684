"""The desk-scale pose estimator: a strided conv regressor over object crops
producing a continuous 6-number rotation, a decoupled translation, and a
coarse segmentation mask."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ..diffcore import ParamSet
from ..diffcore import functional as F
from ..diffcore.checkpoint import load_checkpoint, save_checkpoint
from ..geom.camera import Camera
from ..geom.pose import Pose


@dataclass(frozen=True)
class CropSpec:
    """How scene images are cropped for the estimator.

    Crops are square windows of `crop_px` scene pixels centred on the known
    2-D projection of the object centre (detection is upstream), resampled
    to the network input size. Translation is regressed as pixel offsets
    within the crop plus log-depth around `z_nominal`.
    """
    crop_px: int
    z_nominal: float
    jitter_px: float = 3.0


@dataclass(frozen=True)
class EstimatorConfig:
    input_size: int = 64
    channels: tuple = (16, 32, 64, 64, 128)
    fc_dim: int = 256
    mask_size: int = 16


class _NumpyView:
    def __init__(self, params):
        self._params = params

    def __getitem__(self, name):
        return self._params.value(name)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Channel-last bilinear resampling (half-pixel-centre convention)."""
    in_h, in_w = img.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    ys = np.clip(ys, 0, in_h - 1)
    xs = np.clip(xs, 0, in_w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    if img.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    return (img[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
            + img[np.ix_(y0, x1)] * (1 - fy) * fx
            + img[np.ix_(y1, x0)] * fy * (1 - fx)
            + img[np.ix_(y1, x1)] * fy * fx)


def extract_crop(image: np.ndarray, centre, crop_px: int, out_size: int):
    """Zero-padded square crop around a continuous pixel centre, resized."""
    h, w = image.shape[:2]
    cx, cy = centre
    x0 = int(round(cx - crop_px / 2.0))
    y0 = int(round(cy - crop_px / 2.0))
    canvas = np.zeros((crop_px, crop_px) + image.shape[2:], dtype=np.float64)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + crop_px, w), min(y0 + crop_px, h)
    if sx1 > sx0 and sy1 > sy0:
        canvas[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = image[sy0:sy1, sx0:sx1]
    resized = resize_bilinear(canvas, out_size, out_size)
    window_centre = (x0 + crop_px / 2.0, y0 + crop_px / 2.0)
    return resized, window_centre


def rot6d_to_matrix(v: np.ndarray) -> np.ndarray:
    """Gram-Schmidt decode of the 6-number rotation representation."""
    a1, a2 = v[:3], v[3:6]
    b1 = a1 / np.sqrt(np.dot(a1, a1) + 1e-24)
    a2p = a2 - np.dot(b1, a2) * b1
    b2 = a2p / np.sqrt(np.dot(a2p, a2p) + 1e-24)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def matrix_to_rot6d(r: np.ndarray) -> np.ndarray:
    return np.concatenate([r[:, 0], r[:, 1]])


def _rows(x, i):
    return x[:, i:i + 1]


def rot6d_to_matrix_batch(v):
    """Tape-friendly batched decode: (B, 6) -> (B, 3, 3)."""
    a1 = v[:, 0:3]
    a2 = v[:, 3:6]
    n1 = F.sqrt(F.total(a1 * a1, axis=1, keepdims=True) + 1e-24)
    b1 = a1 / n1
    dot = F.total(b1 * a2, axis=1, keepdims=True)
    a2p = a2 - dot * b1
    n2 = F.sqrt(F.total(a2p * a2p, axis=1, keepdims=True) + 1e-24)
    b2 = a2p / n2
    b3 = F.concat([
        _rows(b1, 1) * _rows(b2, 2) - _rows(b1, 2) * _rows(b2, 1),
        _rows(b1, 2) * _rows(b2, 0) - _rows(b1, 0) * _rows(b2, 2),
        _rows(b1, 0) * _rows(b2, 1) - _rows(b1, 1) * _rows(b2, 0),
    ], axis=1)
    cols = F.concat([b1, b2, b3], axis=1)       # (B, 9) column-major blocks
    b = F.value(cols).shape[0]
    # columns stacked as rows of a (B, 3, 3) tensor, then transposed per-sample
    m = F.reshape(cols, (b, 3, 3))
    return m.transpose((0, 2, 1)) if not isinstance(m, np.ndarray) \
        else np.transpose(m, (0, 2, 1))


class PoseEstimator:
    """Conv regressor from crops to (rotation-6d, du, dv, log z) + mask."""

    def __init__(self, cfg: EstimatorConfig = EstimatorConfig(),
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        self.params = ParamSet()
        c_prev = 3
        spatial = cfg.input_size
        for i, c in enumerate(cfg.channels):
            fan_in = c_prev * 9
            self.params.add(f"est.c{i}.w",
                            rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                       size=(c, c_prev, 3, 3)))
            self.params.add(f"est.c{i}.b", np.zeros(c))
            c_prev = c
            spatial = (spatial - 1) // 2 + 1
        self.flat_dim = c_prev * spatial * spatial
        self.params.add("est.fc.w", rng.normal(0.0, np.sqrt(2.0 / self.flat_dim),
                                               size=(self.flat_dim, cfg.fc_dim)))
        self.params.add("est.fc.b", np.zeros(cfg.fc_dim))
        self.params.add("est.pose.w", rng.normal(0.0, 0.01,
                                                 size=(cfg.fc_dim, 9)))
        pose_bias = np.zeros(9)
        pose_bias[0] = 1.0   # identity-leaning rotation at init
        pose_bias[4] = 1.0
        self.params.add("est.pose.b", pose_bias)
        mask_out = cfg.mask_size * cfg.mask_size
        self.params.add("est.mask.w", rng.normal(0.0, 0.01,
                                                 size=(cfg.fc_dim, mask_out)))
        self.params.add("est.mask.b", np.zeros(mask_out))

    def numpy_params(self):
        return _NumpyView(self.params)

    def fingerprint(self):
        return self.params.fingerprint("est.")

    def apply(self, P, crops):
        """(B, 3, S, S) crops -> (pose_raw (B, 9), mask_logits (B, m, m))."""
        h = crops
        for i, c in enumerate(self.cfg.channels):
            b = F.reshape(P[f"est.c{i}.b"], (1, c, 1, 1))
            h = F.relu(F.conv2d(h, P[f"est.c{i}.w"], stride=2, pad=1) + b)
        n = F.value(h).shape[0]
        flat = F.reshape(h, (n, self.flat_dim))
        fc = F.relu(flat @ P["est.fc.w"] + P["est.fc.b"])
        pose_raw = fc @ P["est.pose.w"] + P["est.pose.b"]
        m = self.cfg.mask_size
        mask_logits = F.reshape(fc @ P["est.mask.w"] + P["est.mask.b"], (n, m, m))
        return pose_raw, mask_logits

    def decode_translation(self, pose_raw: np.ndarray, window_centre,
                           crop: CropSpec, cam: Camera) -> np.ndarray:
        du, dv, logz = pose_raw[6], pose_raw[7], pose_raw[8]
        scale = crop.crop_px / self.cfg.input_size
        u = window_centre[0] + du * scale
        v = window_centre[1] + dv * scale
        z = crop.z_nominal * np.exp(logz)
        return np.array([(u - cam.cx) * z / cam.fx,
                         (v - cam.cy) * z / cam.fy, z])

    def estimate(self, image: np.ndarray, cam: Camera, centre,
                 crop: CropSpec):
        """Full-resolution image -> (Pose, mask at image resolution).

        `centre` is the known 2-D projection of the object centre the crop
        is taken around.
        """
        crop_img, window_centre = extract_crop(image, centre, crop.crop_px,
                                               self.cfg.input_size)
        x = np.transpose(crop_img, (2, 0, 1))[None]
        pose_raw, mask_logits = self.apply(self.numpy_params(), x)
        pose_raw = pose_raw[0]
        rot = rot6d_to_matrix(pose_raw[:6])
        trans = self.decode_translation(pose_raw, window_centre, crop, cam)
        mask_small = F.sigmoid(mask_logits[0])
        mask_crop = resize_bilinear(mask_small, crop.crop_px, crop.crop_px)
        full = np.zeros((cam.height, cam.width))
        x0 = int(round(window_centre[0] - crop.crop_px / 2.0))
        y0 = int(round(window_centre[1] - crop.crop_px / 2.0))
        sx0, sy0 = max(x0, 0), max(y0, 0)
        sx1 = min(x0 + crop.crop_px, cam.width)
        sy1 = min(y0 + crop.crop_px, cam.height)
        if sx1 > sx0 and sy1 > sy0:
            full[sy0:sy1, sx0:sx1] = mask_crop[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0]
        return Pose(rot, trans), full

    def copy(self) -> "PoseEstimator":
        clone = PoseEstimator.__new__(PoseEstimator)
        clone.cfg = self.cfg
        clone.flat_dim = self.flat_dim
        clone.params = self.params.copy()
        return clone

    def save(self, path):
        meta = dict(asdict(self.cfg))
        meta["channels"] = list(meta["channels"])
        blob = np.frombuffer(json.dumps(meta, sort_keys=True).encode(),
                             dtype=np.uint8)
        ps = self.params.copy()
        ps.add("meta.json", blob.astype(np.float64), trainable=False)
        save_checkpoint(ps, path)

    @classmethod
    def load(cls, path) -> "PoseEstimator":
        ps = load_checkpoint(path)
        meta = json.loads(ps.value("meta.json").astype(np.uint8).tobytes().decode())
        meta["channels"] = tuple(meta["channels"])
        est = cls.__new__(cls)
        est.cfg = EstimatorConfig(**meta)
        spatial = est.cfg.input_size
        for _ in est.cfg.channels:
            spatial = (spatial - 1) // 2 + 1
        est.flat_dim = est.cfg.channels[-1] * spatial * spatial
        params = ParamSet()
        for name in ps.names():
            if name != "meta.json":
                params.add(name, ps.value(name), ps.trainable(name))
        est.params = params
        return est
