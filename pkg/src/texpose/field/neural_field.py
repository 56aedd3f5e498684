"""The neural object field: geometry branch, static/transient radiance
branches, per-view embeddings, and patch/image rendering.

Coordinates are normalised by the object's bounding-sphere radius before
encoding so densities live at a trainable scale; depths are reported back in
meters. The geometry branch is trained once against oracle labels and then
frozen; texture learning re-optimises only radiance branches and embeddings.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ..diffcore import ParamSet, Tensor
from ..diffcore import functional as F
from ..diffcore.checkpoint import load_checkpoint, save_checkpoint
from ..geom.camera import Camera, object_rays
from ..geom.pose import Pose
from .encoding import encode, encoded_dim
from .compositing import composite
from .sampling import sample_bins


@dataclass(frozen=True)
class FieldConfig:
    geom_depth: int = 4
    geom_width: int = 128
    feat_dim: int = 64
    rgb_depth: int = 2
    rgb_width: int = 64
    levels_x: int = 6
    levels_dir: int = 2
    embed_dim: int = 8
    samples_per_ray: int = 32
    beta_min: float = 0.03
    density_bias: float = -4.5


class _NumpyView:
    """Parameter accessor yielding plain arrays (the no-gradient path)."""

    def __init__(self, params: ParamSet):
        self._params = params

    def __getitem__(self, name):
        return self._params.value(name)


def _init_linear(params: ParamSet, name: str, fan_in: int, fan_out: int,
                 rng: np.random.Generator, gain=1.0):
    w = rng.normal(0.0, gain * np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
    params.add(f"{name}.w", w)
    params.add(f"{name}.b", np.zeros(fan_out))


def _linear(P, name, x):
    return x @ P[f"{name}.w"] + P[f"{name}.b"]


def _mlp(P, prefix, x, depth, activation):
    h = x
    for i in range(depth):
        h = activation(_linear(P, f"{prefix}.l{i}", h))
    return h


class NeuralField:
    """Trainable object field over a ParamSet, one embedding pair per view."""

    GEOMETRY_PREFIX = "geom."

    def __init__(self, cfg: FieldConfig, n_views: int, bound_radius: float,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.n_views = int(n_views)
        self.bound_radius = float(bound_radius)
        self.params = ParamSet()
        self._init_params(rng)

    # --- construction ---------------------------------------------------------

    def _init_params(self, rng):
        cfg = self.cfg
        p = self.params
        x_dim = encoded_dim(3, cfg.levels_x)
        d_dim = encoded_dim(3, cfg.levels_dir)

        _init_linear(p, "geom.l0", x_dim, cfg.geom_width, rng)
        for i in range(1, cfg.geom_depth):
            _init_linear(p, f"geom.l{i}", cfg.geom_width, cfg.geom_width, rng)
        # low-gain density head keeps the untrained field near-transparent
        _init_linear(p, "geom.sigma", cfg.geom_width, 1, rng, gain=0.1)
        _init_linear(p, "geom.feat", cfg.geom_width, cfg.feat_dim, rng, gain=0.5)

        def rgb_branch(prefix, in_dim):
            _init_linear(p, f"{prefix}.l0", in_dim, cfg.rgb_width, rng)
            for i in range(1, cfg.rgb_depth):
                _init_linear(p, f"{prefix}.l{i}", cfg.rgb_width, cfg.rgb_width, rng)

        rgb_branch("pre", cfg.feat_dim + d_dim)
        _init_linear(p, "pre.rgb", cfg.rgb_width, 3, rng, gain=0.5)

        rgb_branch("static", cfg.feat_dim + d_dim + cfg.embed_dim)
        _init_linear(p, "static.rgb", cfg.rgb_width, 3, rng, gain=0.5)

        rgb_branch("transient", cfg.feat_dim + cfg.embed_dim)
        _init_linear(p, "transient.sigma", cfg.rgb_width, 1, rng, gain=0.1)
        _init_linear(p, "transient.rgb", cfg.rgb_width, 3, rng, gain=0.5)
        _init_linear(p, "transient.beta", cfg.rgb_width, 1, rng, gain=0.5)

        p.add("emb.appearance", rng.normal(0.0, 0.1, size=(self.n_views, cfg.embed_dim)))
        p.add("emb.transient", rng.normal(0.0, 0.1, size=(self.n_views, cfg.embed_dim)))

    # --- branch evaluation -------------------------------------------------------

    def geometry(self, P, pts_norm):
        """Density and geometric feature at normalised points (N, 3)."""
        h = _mlp(P, "geom", encode(pts_norm, self.cfg.levels_x),
                 self.cfg.geom_depth, F.softplus)
        sigma = F.softplus(F.reshape(_linear(P, "geom.sigma", h), (-1,))
                           + self.cfg.density_bias)
        gamma = _linear(P, "geom.feat", h)
        return sigma, gamma

    def _rgb_head(self, P, prefix, x):
        h = _mlp(P, prefix, x, self.cfg.rgb_depth, F.relu)
        return F.sigmoid(_linear(P, f"{prefix}.rgb", h))

    def pretrain_colour(self, P, gamma, d_enc):
        return self._rgb_head(P, "pre", F.concat([gamma, d_enc], axis=-1))

    def static_colour(self, P, gamma, d_enc, tau_a):
        return self._rgb_head(P, "static", F.concat([gamma, d_enc, tau_a], axis=-1))

    def transient_outputs(self, P, gamma, tau_t):
        h = _mlp(P, "transient", F.concat([gamma, tau_t], axis=-1),
                 self.cfg.rgb_depth, F.relu)
        sigma_t = F.reshape(F.softplus(_linear(P, "transient.sigma", h)
                                       + self.cfg.density_bias), (-1,))
        c_t = F.sigmoid(_linear(P, "transient.rgb", h))
        beta = self.cfg.beta_min + F.reshape(
            F.softplus(_linear(P, "transient.beta", h)), (-1,))
        return sigma_t, c_t, beta

    # --- rendering ------------------------------------------------------------------

    def numpy_params(self) -> _NumpyView:
        return _NumpyView(self.params)

    def mean_appearance(self) -> np.ndarray:
        return self.params.value("emb.appearance").mean(axis=0)

    def sample_rays(self, t0, t1, valid, k, stratified=False, rng=None):
        """Normalised quadrature samples for a ray bundle; invalid rays get
        degenerate zero-width intervals and composite to exactly empty."""
        rb = self.bound_radius
        t0 = np.where(valid, t0, t0 * 0.0)
        t1 = np.where(valid, t1, t0)
        return sample_bins(t0 / rb, t1 / rb, k, stratified, rng)

    def render_rays(self, P, origins, dirs, t0, t1, valid, *, mode,
                    view_id=None, k=None, stratified=False, rng=None,
                    appearance=None, geom_override=None, samples=None):
        """Render a ray bundle. `mode` is one of pretrain / train / synthesis.

        Origins and directions may be Tensors (gradients then flow through
        the sample positions into the geometry branch, as the
        render-and-compare baseline needs). `geom_override` short-circuits the
        geometry query with precomputed (sigma, gamma), which texture
        learning uses since the frozen branch needs no gradient; `samples`
        supplies externally drawn (t_norm, delta) so the two passes see the
        same points.
        """
        cfg = self.cfg
        k = k or cfg.samples_per_ray
        if samples is not None:
            t_norm, delta = samples
            k = t_norm.shape[1]
        else:
            t_norm, delta = self.sample_rays(t0, t1, valid, k, stratified, rng)
        rb = self.bound_radius

        n_rays = len(t_norm)
        o_n = F.reshape(origins * (1.0 / rb), (n_rays, 1, 3))
        d_b = F.reshape(dirs, (n_rays, 1, 3))
        pts = o_n + d_b * t_norm[:, :, None]
        pts_flat = F.reshape(pts, (n_rays * k, 3))

        if geom_override is not None:
            sigma, gamma = geom_override
        else:
            sigma, gamma = self.geometry(P, pts_flat)
        sigma = F.reshape(sigma, (n_rays, k))

        d_dim = encoded_dim(3, cfg.levels_dir)
        d_enc = encode(dirs, cfg.levels_dir)
        d_enc = F.reshape(F.broadcast_to(
            F.reshape(d_enc, (n_rays, 1, d_dim)), (n_rays, k, d_dim)),
            (n_rays * k, d_dim))

        if mode == "pretrain":
            colour = self.pretrain_colour(P, gamma, d_enc)
            parts = {}
        elif mode == "synthesis":
            tau_a = appearance if appearance is not None else self.mean_appearance()
            tau_a = F.broadcast_to(F.reshape(tau_a, (1, cfg.embed_dim)),
                                   (n_rays * k, cfg.embed_dim))
            colour = self.static_colour(P, gamma, d_enc, tau_a)
            parts = {}
        elif mode == "train":
            if view_id is None:
                raise ValueError("train mode needs a view_id")
            tau_a = F.broadcast_to(P["emb.appearance"][view_id:view_id + 1, :],
                                   (n_rays * k, cfg.embed_dim))
            tau_t = F.broadcast_to(P["emb.transient"][view_id:view_id + 1, :],
                                   (n_rays * k, cfg.embed_dim))
            colour = self.static_colour(P, gamma, d_enc, tau_a)
            sigma_t, c_t, beta = self.transient_outputs(P, gamma, tau_t)
            parts = {
                "sigma_t": F.reshape(sigma_t, (n_rays, k)),
                "colour_t": F.reshape(c_t, (n_rays, k, 3)),
                "beta": F.reshape(beta, (n_rays, k)),
            }
        else:
            raise ValueError(f"unknown mode {mode!r}")

        colour = F.reshape(colour, (n_rays, k, 3))
        out = composite(sigma, colour, delta, t_norm * rb,
                        sigma_t=parts.get("sigma_t"),
                        colour_t=parts.get("colour_t"),
                        beta=parts.get("beta"),
                        beta_min=cfg.beta_min)
        if mode == "train":
            out["sigma_t_mean"] = F.mean(parts["sigma_t"])
        return out

    def patch_rays(self, cam: Camera, pose: Pose, rect):
        """Object-frame rays through the pixel centres of rect = (x0, y0, w, h)."""
        x0, y0, w, h = rect
        if x0 < 0 or y0 < 0 or x0 + w > cam.width or y0 + h > cam.height:
            raise ValueError(f"rect {rect} outside image {cam.width}x{cam.height}")
        xs = np.arange(x0, x0 + w, dtype=np.float64) + 0.5
        ys = np.arange(y0, y0 + h, dtype=np.float64) + 0.5
        px, py = np.meshgrid(xs, ys)
        origins, dirs, t0, t1, valid = object_rays(cam, pose, px, py,
                                                   self.bound_radius)
        return (origins.reshape(-1, 3), dirs.reshape(-1, 3),
                t0.reshape(-1), t1.reshape(-1), valid.reshape(-1))

    def render_patch(self, P, cam, pose, rect, *, mode, view_id=None, k=None,
                     stratified=False, rng=None, appearance=None,
                     geom_override=None, samples=None):
        """Per-pixel render of a rectangular patch; dict of (h, w, ...) outputs."""
        origins, dirs, t0, t1, valid = self.patch_rays(cam, pose, rect)
        out = self.render_rays(P, origins, dirs, t0, t1, valid, mode=mode,
                               view_id=view_id, k=k, stratified=stratified,
                               rng=rng, appearance=appearance,
                               geom_override=geom_override, samples=samples)
        w, h = rect[2], rect[3]
        shaped = {}
        for key, val in out.items():
            if key == "weights" or key == "sigma_t_mean":
                shaped[key] = val
            elif key == "C":
                shaped[key] = F.reshape(val, (h, w, 3))
            else:
                shaped[key] = F.reshape(val, (h, w))
        return shaped

    def render_image(self, cam: Camera, pose: Pose, *, mode="synthesis",
                     view_id=None, k=None, appearance=None, chunk=4096):
        """Full-image render on the no-gradient path; returns ndarrays."""
        P = self.numpy_params()
        px, py = cam.pixel_grid()
        origins, dirs, t0, t1, valid = object_rays(cam, pose, px, py,
                                                   self.bound_radius)
        n = cam.width * cam.height
        origins = origins.reshape(n, 3)
        dirs = dirs.reshape(n, 3)
        t0, t1, valid = t0.reshape(n), t1.reshape(n), valid.reshape(n)
        buf = {"C": np.zeros((n, 3)), "D": np.zeros(n), "M": np.zeros(n)}
        if mode == "train":
            buf["beta"] = np.zeros(n)
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            out = self.render_rays(P, origins[lo:hi], dirs[lo:hi], t0[lo:hi],
                                   t1[lo:hi], valid[lo:hi], mode=mode,
                                   view_id=view_id, k=k, appearance=appearance)
            for key in buf:
                buf[key][lo:hi] = F.value(out[key])
        h, w = cam.height, cam.width
        result = {"C": buf["C"].reshape(h, w, 3), "D": buf["D"].reshape(h, w),
                  "M": buf["M"].reshape(h, w)}
        # expected-termination depth is meaningless on empty rays
        result["D"] = np.where(result["M"] < 1e-6, 0.0, result["D"])
        if "beta" in buf:
            result["beta"] = buf["beta"].reshape(h, w)
        return result

    # --- freezing and persistence -----------------------------------------------------

    def clone(self) -> "NeuralField":
        twin = NeuralField.__new__(NeuralField)
        twin.cfg = self.cfg
        twin.n_views = self.n_views
        twin.bound_radius = self.bound_radius
        twin.params = self.params.copy()
        return twin

    def freeze_geometry(self):
        self.params.freeze(self.GEOMETRY_PREFIX)

    def geometry_fingerprint(self) -> str:
        return self.params.fingerprint(self.GEOMETRY_PREFIX)

    def save(self, path):
        meta = dict(asdict(self.cfg), n_views=self.n_views,
                    bound_radius=self.bound_radius)
        blob = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        ps = self.params.copy()
        ps.add("meta.json", blob.astype(np.float64), trainable=False)
        save_checkpoint(ps, path)

    @classmethod
    def load(cls, path) -> "NeuralField":
        ps = load_checkpoint(path)
        blob = ps.value("meta.json").astype(np.uint8).tobytes()
        meta = json.loads(blob.decode())
        n_views = meta.pop("n_views")
        bound_radius = meta.pop("bound_radius")
        cfg = FieldConfig(**meta)
        field = cls.__new__(cls)
        field.cfg = cfg
        field.n_views = n_views
        field.bound_radius = bound_radius
        params = ParamSet()
        for name in ps.names():
            if name != "meta.json":
                params.add(name, ps.value(name), ps.trainable(name))
        field.params = params
        return field
