"""Numba kernel backend: tile-binned per-pixel compositing loops.

Splats arrive pre-sorted front to back; tile lists are filled in that
order, so each pixel walks its overlapping splats in depth order and can
stop early once its transmittance collapses.  Loops are sequential on
purpose: results must not depend on thread count.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _bin_tiles(bboxes, h, w, tile):
    tiles_x = (w + tile - 1) // tile
    tiles_y = (h + tile - 1) // tile
    n_tiles = tiles_x * tiles_y
    m = bboxes.shape[0]

    counts = np.zeros(n_tiles, dtype=np.int64)
    for s in range(m):
        x0, y0, x1, y1 = bboxes[s, 0], bboxes[s, 1], bboxes[s, 2], bboxes[s, 3]
        if x1 < x0 or y1 < y0:
            continue
        for ty in range(y0 // tile, y1 // tile + 1):
            for tx in range(x0 // tile, x1 // tile + 1):
                counts[ty * tiles_x + tx] += 1

    offsets = np.zeros(n_tiles + 1, dtype=np.int64)
    for t in range(n_tiles):
        offsets[t + 1] = offsets[t] + counts[t]

    lists = np.empty(offsets[n_tiles], dtype=np.int64)
    cursor = offsets[:-1].copy()
    for s in range(m):
        x0, y0, x1, y1 = bboxes[s, 0], bboxes[s, 1], bboxes[s, 2], bboxes[s, 3]
        if x1 < x0 or y1 < y0:
            continue
        for ty in range(y0 // tile, y1 // tile + 1):
            for tx in range(x0 // tile, x1 // tile + 1):
                t = ty * tiles_x + tx
                lists[cursor[t]] = s
                cursor[t] += 1
    return tiles_x, tiles_y, offsets, lists


@njit(cache=True)
def _forward_impl(means, inv_cov, opacities, feats, bboxes, h, w, tile, alpha_cutoff, t_floor):
    out = np.zeros((h, w, 3), dtype=np.float64)
    trans = np.ones((h, w), dtype=np.float64)
    tiles_x, tiles_y, offsets, lists = _bin_tiles(bboxes, h, w, tile)

    for ty in range(tiles_y):
        for tx in range(tiles_x):
            t = ty * tiles_x + tx
            lo, hi = offsets[t], offsets[t + 1]
            if lo == hi:
                continue
            for py in range(ty * tile, min((ty + 1) * tile, h)):
                for px in range(tx * tile, min((tx + 1) * tile, w)):
                    T = 1.0
                    for ii in range(lo, hi):
                        if T < t_floor:
                            break
                        s = lists[ii]
                        if px < bboxes[s, 0] or px > bboxes[s, 2] or py < bboxes[s, 1] or py > bboxes[s, 3]:
                            continue
                        dx = px - means[s, 0]
                        dy = py - means[s, 1]
                        q = inv_cov[s, 0] * dx * dx + 2.0 * inv_cov[s, 1] * dy * dx + inv_cov[s, 2] * dy * dy
                        a = opacities[s] * np.exp(-0.5 * q)
                        if a > 0.99:
                            a = 0.99
                        if a < alpha_cutoff:
                            continue
                        wgt = a * T
                        out[py, px, 0] += wgt * feats[s, 0]
                        out[py, px, 1] += wgt * feats[s, 1]
                        out[py, px, 2] += wgt * feats[s, 2]
                        T *= 1.0 - a
                    trans[py, px] = T
    return out, trans


@njit(cache=True)
def _backward_impl(means, inv_cov, opacities, bboxes, gauss_ids, n_gaussians, pixel_grad, h, w, tile, alpha_cutoff, t_floor):
    grad = np.zeros((n_gaussians, 3), dtype=np.float64)
    tiles_x, tiles_y, offsets, lists = _bin_tiles(bboxes, h, w, tile)

    for ty in range(tiles_y):
        for tx in range(tiles_x):
            t = ty * tiles_x + tx
            lo, hi = offsets[t], offsets[t + 1]
            if lo == hi:
                continue
            for py in range(ty * tile, min((ty + 1) * tile, h)):
                for px in range(tx * tile, min((tx + 1) * tile, w)):
                    T = 1.0
                    for ii in range(lo, hi):
                        if T < t_floor:
                            break
                        s = lists[ii]
                        if px < bboxes[s, 0] or px > bboxes[s, 2] or py < bboxes[s, 1] or py > bboxes[s, 3]:
                            continue
                        dx = px - means[s, 0]
                        dy = py - means[s, 1]
                        q = inv_cov[s, 0] * dx * dx + 2.0 * inv_cov[s, 1] * dy * dx + inv_cov[s, 2] * dy * dy
                        a = opacities[s] * np.exp(-0.5 * q)
                        if a > 0.99:
                            a = 0.99
                        if a < alpha_cutoff:
                            continue
                        wgt = a * T
                        gid = gauss_ids[s]
                        grad[gid, 0] += wgt * pixel_grad[py, px, 0]
                        grad[gid, 1] += wgt * pixel_grad[py, px, 1]
                        grad[gid, 2] += wgt * pixel_grad[py, px, 2]
                        T *= 1.0 - a
    return grad


def forward(means, inv_cov, opacities, feats, bboxes, h, w, tile, alpha_cutoff, t_floor):
    return _forward_impl(
        np.ascontiguousarray(means),
        np.ascontiguousarray(inv_cov),
        np.ascontiguousarray(opacities),
        np.ascontiguousarray(feats),
        np.ascontiguousarray(bboxes),
        h,
        w,
        tile,
        alpha_cutoff,
        t_floor,
    )


def backward(means, inv_cov, opacities, bboxes, gauss_ids, n_gaussians, pixel_grad, h, w, tile, alpha_cutoff, t_floor):
    return _backward_impl(
        np.ascontiguousarray(means),
        np.ascontiguousarray(inv_cov),
        np.ascontiguousarray(opacities),
        np.ascontiguousarray(bboxes),
        np.ascontiguousarray(gauss_ids),
        n_gaussians,
        np.ascontiguousarray(pixel_grad),
        h,
        w,
        tile,
        alpha_cutoff,
        t_floor,
    )
