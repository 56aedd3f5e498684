"""Quadrature compositing of densities and colours into per-ray outputs.

Per sample k: transmittance alpha_k = prod_{j<k} exp(-delta_j sigma_j) and
survival w_k = exp(-delta_k sigma_k); the contribution weight is
omega_k = alpha_k (1 - w_k). Colour, depth and opacity are the
omega-weighted sums of sample colour, distance and one.

When the transient branch participates (training only), densities add and
the per-sample colour blends in proportion sigma : sigma_t; ray uncertainty
accumulates transient betas under transient-only weights.
"""

from __future__ import annotations

import numpy as np

from ..diffcore import functional as F

_BLEND_EPS = 1e-12


def _weights(sigma, delta):
    tau = sigma * delta
    cum = F.cumsum(tau, axis=-1)
    alpha_log = cum - tau            # exclusive cumulative sum
    alpha = F.exp(-alpha_log)
    one_minus_w = 1.0 - F.exp(-tau)
    return alpha * one_minus_w


def composite(sigma, colour, delta, t, sigma_t=None, colour_t=None,
              beta=None, beta_min=0.03):
    """Render rays from per-sample quantities.

    sigma, delta, t: (R, K); colour: (R, K, 3). Optional transient inputs
    mirror those shapes (beta is (R, K)). Returns a dict with C (R, 3),
    D (R,), M (R,) and, when transient inputs are given, beta (R,).
    Step sizes may be zero (empty rays) but densities must be non-negative.
    """
    if np.any(F.value(sigma) < 0):
        raise ValueError("negative density input")
    if np.any(F.value(delta) < 0):
        raise ValueError("negative step size")
    transient = sigma_t is not None
    if transient and np.any(F.value(sigma_t) < 0):
        raise ValueError("negative transient density input")

    if transient:
        total_sigma = sigma + sigma_t
        blend = (sigma[..., None] * colour + sigma_t[..., None] * colour_t) \
            / (total_sigma[..., None] + _BLEND_EPS)
        omega = _weights(total_sigma, delta)
        omega_t = _weights(sigma_t, delta)
        beta_ray = beta_min + F.total(omega_t * beta, axis=-1)
    else:
        blend = colour
        omega = _weights(sigma, delta)
        beta_ray = None

    out = {
        "C": F.total(omega[..., None] * blend, axis=-2),
        "D": F.total(omega * t, axis=-1),
        "M": F.total(omega, axis=-1),
        "weights": omega,
    }
    if beta_ray is not None:
        out["beta"] = beta_ray
    return out
