"""Pure-numpy kernel backend: one vectorized window pass per splat.

Each splat is processed in depth order, updating a running transmittance
image.  Per pixel, the ops and their order match the numba backend
exactly; only the summation hardware differs.
"""

from __future__ import annotations

import numpy as np


def _splat_alpha(means, inv_cov, opacities, bbox, s):
    x0, y0, x1, y1 = bbox[s]
    dx = np.arange(x0, x1 + 1, dtype=np.float64) - means[s, 0]
    dy = np.arange(y0, y1 + 1, dtype=np.float64) - means[s, 1]
    q = (
        inv_cov[s, 0] * dx[None, :] ** 2
        + 2.0 * inv_cov[s, 1] * dy[:, None] * dx[None, :]
        + inv_cov[s, 2] * dy[:, None] ** 2
    )
    return np.minimum(opacities[s] * np.exp(-0.5 * q), 0.99)


def forward(means, inv_cov, opacities, feats, bboxes, h, w, tile, alpha_cutoff, t_floor):
    out = np.zeros((h, w, 3), dtype=np.float64)
    trans = np.ones((h, w), dtype=np.float64)
    for s in range(means.shape[0]):
        x0, y0, x1, y1 = bboxes[s]
        if x1 < x0 or y1 < y0:
            continue
        alpha = _splat_alpha(means, inv_cov, opacities, bboxes, s)
        win = trans[y0 : y1 + 1, x0 : x1 + 1]
        active = (alpha >= alpha_cutoff) & (win >= t_floor)
        if not active.any():
            continue
        a_eff = np.where(active, alpha, 0.0)
        weight = a_eff * win
        out[y0 : y1 + 1, x0 : x1 + 1] += weight[:, :, None] * feats[s]
        trans[y0 : y1 + 1, x0 : x1 + 1] = win * (1.0 - a_eff)
    return out, trans


def backward(means, inv_cov, opacities, bboxes, gauss_ids, n_gaussians, pixel_grad, h, w, tile, alpha_cutoff, t_floor):
    grad = np.zeros((n_gaussians, 3), dtype=np.float64)
    trans = np.ones((h, w), dtype=np.float64)
    for s in range(means.shape[0]):
        x0, y0, x1, y1 = bboxes[s]
        if x1 < x0 or y1 < y0:
            continue
        alpha = _splat_alpha(means, inv_cov, opacities, bboxes, s)
        win = trans[y0 : y1 + 1, x0 : x1 + 1]
        active = (alpha >= alpha_cutoff) & (win >= t_floor)
        if not active.any():
            continue
        a_eff = np.where(active, alpha, 0.0)
        weight = a_eff * win
        g = pixel_grad[y0 : y1 + 1, x0 : x1 + 1, :]
        grad[gauss_ids[s]] += np.einsum("yx,yxc->c", weight, g)
        trans[y0 : y1 + 1, x0 : x1 + 1] = win * (1.0 - a_eff)
    return grad
