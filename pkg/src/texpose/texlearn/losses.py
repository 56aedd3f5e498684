"""Texture-learning objectives.

Geometric pretraining minimises a photometric + mask term plus a
scale-invariant depth term against oracle labels. Texture learning combines
an uncertainty-weighted reconstruction, a surfel-conditioned adversarial
term, and a synthetic-boundary feature regulariser.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diffcore import functional as F

_LOG_CLAMP = 1e-6


@dataclass
class LossWeights:
    lambda_m: float = 1.0        # mask term inside the 2-D loss
    lambda_d: float = 0.5        # depth term in pretraining
    lambda_adv: float = 0.05     # adversarial term in the texture loss
    lambda_reg: float = 0.1      # boundary regulariser in the texture loss
    lambda_fg: float = 1.0       # foreground-fidelity term inside the regulariser
    lambda_transient: float = 0.01  # transient density penalty

    def __post_init__(self):
        for name, val in self.__dict__.items():
            if val < 0:
                raise ValueError(f"{name} must be non-negative, got {val}")


@dataclass
class PretrainBatch:
    """Rendered ray bundle paired with oracle labels."""
    colour: object        # (N, 3) rendered, may be a Tensor
    mask: object          # (N,)
    depth: object         # (N,)
    target_colour: np.ndarray
    target_mask: np.ndarray
    target_depth: np.ndarray
    depth_valid: np.ndarray   # oracle hit mask; depth is supervised here only


@dataclass
class PatchBatch:
    """A batch of patches with everything the texture losses consume.

    `mask` is the eroded predicted mask (the trusted foreground); `mask_pad`
    is the synthetic rim that patches boundary imperfections, so their
    supports are disjoint by construction.
    """
    pred_colour: object       # (B, h, w, 3) rendered, may be a Tensor
    obs_colour: np.ndarray    # (B, h, w, 3) observed real patches
    syn_colour: np.ndarray    # (B, h, w, 3) synthetic patches at the pose estimate
    mask: np.ndarray          # (B, h, w) eroded predicted mask
    mask_syn: np.ndarray      # (B, h, w) synthetic mask
    mask_pad: np.ndarray      # (B, h, w) padded mask, mask_syn * (1 - mask)
    surfel_x: np.ndarray      # (B, h, w, 3)
    surfel_n: np.ndarray      # (B, h, w, 3)
    beta: object = None       # (B, h, w) rendered uncertainty, may be a Tensor
    sigma_t_mean: object = 0.0
    view_ids: np.ndarray = None

    def validate(self):
        b, h, w, _ = np.shape(self.obs_colour)
        for name in ("syn_colour", "surfel_x", "surfel_n"):
            if np.shape(getattr(self, name)) != (b, h, w, 3):
                raise ValueError(f"{name} shape mismatch")
        for name in ("mask", "mask_syn", "mask_pad"):
            arr = getattr(self, name)
            if np.shape(arr) != (b, h, w):
                raise ValueError(f"{name} shape mismatch")
            if arr.min() < 0 or arr.max() > 1:
                raise ValueError(f"{name} outside [0, 1]")
        if np.max(self.mask_pad * self.mask) > 1e-6:
            raise ValueError("padded mask overlaps the trusted mask")
        return self


def loss_2d(colour, target_colour, mask, target_mask, lambda_m=1.0):
    """Mean over rays of squared colour error plus weighted squared mask error."""
    if F.value(colour).shape != np.shape(target_colour):
        raise ValueError("colour shapes differ")
    if F.value(mask).shape != np.shape(target_mask):
        raise ValueError("mask shapes differ")
    dc = colour - target_colour
    dm = mask - target_mask
    return F.mean(F.total(dc * dc, axis=-1) + lambda_m * (dm * dm))


def loss_depth_si(depth, target_depth, valid):
    """Scale-and-shift-invariant depth loss.

    A least-squares affine map (a, b) aligns the prediction to the target
    over valid pixels before the mean squared residual; a constant
    prediction (or a single valid pixel) degrades gracefully to shift-only
    alignment.
    """
    v = np.asarray(valid, dtype=np.float64).reshape(-1)
    n = float(v.sum())
    if n < 1:
        raise ValueError("need at least one valid pixel")
    d = F.reshape(depth, (-1,))
    y = np.asarray(target_depth, dtype=np.float64).reshape(-1)

    sx = F.total(v * d)
    sy = float(np.sum(v * y))
    sxx = F.total(v * d * d)
    sxy = F.total(v * d * y)

    sx_val, sxx_val = float(F.value(sx)), float(F.value(sxx))
    det_val = n * sxx_val - sx_val * sx_val
    scale_free = det_val / max(n * sxx_val, 1e-30)
    if n < 2 or scale_free < 1e-9:
        a = 1.0
        b = (sy - sx) * (1.0 / n)
    else:
        a = (n * sxy - sx * sy) * (1.0 / (n * sxx - sx * sx))
        b = (sy - a * sx) * (1.0 / n)
    r = a * d + b - y
    return F.total(v * r * r) * (1.0 / n)


def loss_pretrain(batch: PretrainBatch, weights: LossWeights):
    """Photometric + mask term, plus the scale-invariant depth term."""
    out = loss_2d(batch.colour, batch.target_colour, batch.mask,
                  batch.target_mask, weights.lambda_m)
    if weights.lambda_d > 0 and np.sum(batch.depth_valid) >= 1:
        out = out + weights.lambda_d * loss_depth_si(
            batch.depth, batch.target_depth, batch.depth_valid)
    return out


def loss_rec(batch: PatchBatch, lambda_transient=0.01):
    """Uncertainty-aware reconstruction over trusted-foreground pixels.

    Per pixel: |P - P_obs|^2 / (2 beta^2) + log beta, averaged under the
    trusted mask, plus a mean transient-density penalty.
    """
    if np.min(F.value(batch.beta)) < 0.029999:
        raise ValueError("beta below the uncertainty floor")
    w = batch.mask
    denom = max(float(w.sum()), 1.0)
    diff = batch.pred_colour - batch.obs_colour
    sq = F.total(diff * diff, axis=-1)
    beta = batch.beta
    data = F.total(w * (sq / (2.0 * beta * beta) + F.log(beta))) * (1.0 / denom)
    return data + lambda_transient * batch.sigma_t_mean


def _disc_inputs(batch: PatchBatch, colour):
    """Channel-concatenated [S_x, S_n, colour] patches in NCHW layout."""
    sx = np.transpose(batch.surfel_x, (0, 3, 1, 2))
    sn = np.transpose(batch.surfel_n, (0, 3, 1, 2))
    if hasattr(colour, "transpose") and not isinstance(colour, np.ndarray):
        c = colour.transpose((0, 3, 1, 2))
    else:
        c = np.transpose(colour, (0, 3, 1, 2))
    return F.concat([sx, sn, c], axis=1)


def loss_adv(batch: PatchBatch, disc, side: str, disc_params=None,
             gan_form="paper"):
    """Surfel-conditioned adversarial objective for sampled patches.

    `side="discriminator"` returns the value the discriminator maximises
    (training loops minimise its negation); `side="generator"` returns the
    quantity minimised with respect to the renderer. Real patches are the
    observed colours under the trusted mask. Log arguments are clamped to
    [1e-6, 1 - 1e-6].
    """
    P = disc_params if disc_params is not None else disc.numpy_params()
    fake = F.clip(disc.apply(P, _disc_inputs(batch, batch.pred_colour)),
                  _LOG_CLAMP, 1.0 - _LOG_CLAMP)
    if side == "generator":
        if gan_form == "paper":
            return F.mean(1.0 - F.log(fake))
        return F.mean(F.log(F.clip(1.0 - fake, _LOG_CLAMP, 1.0)))
    if side != "discriminator":
        raise ValueError(f"unknown side {side!r}")
    real_colour = batch.mask[..., None] * batch.obs_colour
    real = F.clip(disc.apply(P, _disc_inputs(batch, real_colour)),
                  _LOG_CLAMP, 1.0 - _LOG_CLAMP)
    if gan_form == "paper":
        return F.mean(1.0 - F.log(fake)) + F.mean(F.log(real))
    return F.mean(F.log(real)) + F.mean(F.log(F.clip(1.0 - fake, _LOG_CLAMP, 1.0)))


def erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary erosion with a (2r+1)-square element; outside counts as empty."""
    if radius <= 0:
        return np.asarray(mask, dtype=np.float64).copy()
    m = np.asarray(mask, dtype=np.float64)
    padded = np.pad(m, radius, constant_values=0.0)
    out = np.ones_like(m)
    size = 2 * radius + 1
    h, w = m.shape
    for dy in range(size):
        for dx in range(size):
            out = np.minimum(out, padded[dy:dy + h, dx:dx + w])
    return out


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return np.asarray(mask, dtype=np.float64).copy()
    m = np.asarray(mask, dtype=np.float64)
    padded = np.pad(m, radius, constant_values=0.0)
    out = np.zeros_like(m)
    size = 2 * radius + 1
    h, w = m.shape
    for dy in range(size):
        for dx in range(size):
            out = np.maximum(out, padded[dy:dy + h, dx:dx + w])
    return out


def pad_mask(mask: np.ndarray, mask_syn: np.ndarray, erosion_radius: int) -> np.ndarray:
    """Synthetic rim: erode the predicted mask, then mask_syn * (1 - eroded)."""
    m = np.asarray(mask, dtype=np.float64)
    s = np.asarray(mask_syn, dtype=np.float64)
    if m.shape != s.shape:
        raise ValueError("mask shapes differ")
    if m.min() < 0 or m.max() > 1 or s.min() < 0 or s.max() > 1:
        raise ValueError("masks must lie in [0, 1]")
    return s * (1.0 - erode(m, erosion_radius))


def feature_mse(fx, a, b):
    """Mean squared feature distance across all pyramid stages."""
    fa = fx.features(a)
    fb = fx.features(b)
    total = 0.0
    for sa, sb in zip(fa, fb):
        d = sa - sb
        total = total + F.mean(d * d)
    return total * (1.0 / len(fa))


def loss_reg(batch: PatchBatch, fx, lambda_fg=1.0):
    """Boundary regularisation from synthetic texture.

    Aligns rendered patches with the real foreground padded by synthetic
    colours, while the second term pins the trusted-foreground region to the
    observation so synthetic texture cannot leak inside.
    """
    def nchw(x):
        if isinstance(x, np.ndarray):
            return np.transpose(x, (0, 3, 1, 2))
        return x.transpose((0, 3, 1, 2))

    target = batch.mask[..., None] * batch.obs_colour \
        + batch.mask_pad[..., None] * batch.syn_colour
    term1 = feature_mse(fx, nchw(batch.pred_colour), nchw(target))
    inner = batch.mask[..., None] * batch.pred_colour \
        + (1.0 - batch.mask[..., None]) * batch.obs_colour
    term2 = feature_mse(fx, nchw(inner), nchw(batch.obs_colour))
    return term1 + lambda_fg * term2


def loss_tex(batch: PatchBatch, disc, fx, weights: LossWeights,
             disc_params=None, gan_form="paper"):
    """Full texture-learner objective: reconstruction + adversarial + regulariser."""
    out = loss_rec(batch, weights.lambda_transient)
    if weights.lambda_adv > 0:
        out = out + weights.lambda_adv * loss_adv(
            batch, disc, "generator", disc_params=disc_params, gan_form=gan_form)
    if weights.lambda_reg > 0:
        out = out + weights.lambda_reg * loss_reg(batch, fx, weights.lambda_fg)
    return out
