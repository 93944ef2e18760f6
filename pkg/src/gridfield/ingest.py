"""Dataset sanitation and correspondence utilities.

Mask denoising, masked color histograms, and the built-in corner
detector/matcher used when a dataset ships no precomputed matches.  All
operations are pure and deterministic; per view pair / per mask work may
run in parallel without changing results.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import DomainError
from .scene_data import (
    HIST_BINS_PER_CHANNEL,
    HIST_SIZE,
    ColorHistogram,
    Dataset,
    MaskRecord,
)

HARRIS_K = 0.05
HARRIS_REL_THRESHOLD = 0.01
HARRIS_SIGMA = 1.0
HARRIS_MAX_CORNERS = 500
PATCH_RADIUS = 5  # 11x11 descriptor patches
LOWE_RATIO = 0.75


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = int(np.logical_and(a, b).sum())
    union = int(np.logical_or(a, b).sum())
    return inter / union if union else 1.0


def denoise_masks(
    masks: list[list[MaskRecord]],
    image_hw: tuple[int, int],
    min_area_frac: float = 0.001,
    dedup_iou: float = 0.9,
) -> tuple[list[list[MaskRecord]], list[str]]:
    """Drop speckle masks and collapse near-duplicates within each view.

    A mask survives the area filter when area >= min_area_frac * H * W.
    Within a view, any mask whose IoU with an earlier survivor exceeds
    ``dedup_iou`` is dropped (the earlier, lower-local-index mask wins).
    Order is otherwise preserved and the pass is idempotent.

    Returns the filtered per-view lists and a warning entry for every view
    left without masks.
    """
    h, w = image_hw
    min_area = min_area_frac * h * w
    out: list[list[MaskRecord]] = []
    warnings: list[str] = []
    for t, per_view in enumerate(masks):
        survivors: list[MaskRecord] = []
        for m in per_view:
            if m.area < min_area:
                continue
            if any(mask_iou(m.bitmap, s.bitmap) > dedup_iou for s in survivors):
                continue
            survivors.append(m)
        if per_view and not survivors:
            warnings.append(f"view {t}: all {len(per_view)} masks removed by denoising")
        out.append(survivors)
    return out, warnings


def compute_color_histogram(rgb: np.ndarray, bitmap: np.ndarray) -> ColorHistogram:
    """Joint 8x8x8 RGB histogram over masked pixels, L1-normalized.

    Bin edges split the 8-bit range evenly (32 levels per bin), so
    quantized images bin exactly.
    """
    bitmap = np.asarray(bitmap, dtype=bool)
    area = int(bitmap.sum())
    if area < 1:
        raise DomainError("cannot build a color histogram over an empty mask")
    px = np.asarray(rgb, dtype=np.float64)[bitmap]
    levels = np.clip((px * 256.0).astype(np.int64), 0, 255) >> 5
    joint = (levels[:, 0] * HIST_BINS_PER_CHANNEL + levels[:, 1]) * HIST_BINS_PER_CHANNEL + levels[:, 2]
    counts = np.bincount(joint, minlength=HIST_SIZE).astype(np.float64)
    return ColorHistogram(counts / area)


def rgb_to_gray(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) @ np.array([0.299, 0.587, 0.114])


def harris_corners(gray: np.ndarray, max_corners: int = HARRIS_MAX_CORNERS) -> np.ndarray:
    """Harris corner positions as an (n, 2) array of (x, y), response-ranked.

    Ties in response break by scanline order so the result is deterministic.
    Corners too close to the border for an 11x11 patch are excluded.
    """
    gray = np.ascontiguousarray(gray, dtype=np.float64)
    ix = ndimage.sobel(gray, axis=1, mode="nearest")
    iy = ndimage.sobel(gray, axis=0, mode="nearest")
    sxx = ndimage.gaussian_filter(ix * ix, HARRIS_SIGMA, mode="nearest")
    syy = ndimage.gaussian_filter(iy * iy, HARRIS_SIGMA, mode="nearest")
    sxy = ndimage.gaussian_filter(ix * iy, HARRIS_SIGMA, mode="nearest")
    resp = sxx * syy - sxy * sxy - HARRIS_K * (sxx + syy) ** 2

    peak = float(resp.max(initial=0.0))
    if peak <= 0.0:
        return np.empty((0, 2), dtype=np.float64)
    local_max = resp == ndimage.maximum_filter(resp, size=5, mode="nearest")
    strong = local_max & (resp > HARRIS_REL_THRESHOLD * peak)

    margin = PATCH_RADIUS + 1
    strong[:margin, :] = False
    strong[-margin:, :] = False
    strong[:, :margin] = False
    strong[:, -margin:] = False

    ys, xs = np.nonzero(strong)
    if ys.size == 0:
        return np.empty((0, 2), dtype=np.float64)
    order = np.lexsort((xs, ys, -resp[ys, xs]))[:max_corners]
    return np.stack([xs[order], ys[order]], axis=1).astype(np.float64)


def patch_descriptors(gray: np.ndarray, corners: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalized 11x11 patch descriptors; flat patches are dropped.

    Returns (kept corners, (n, 121) descriptors).
    """
    r = PATCH_RADIUS
    descs = []
    kept = []
    for x, y in corners:
        xi, yi = int(round(x)), int(round(y))
        patch = gray[yi - r : yi + r + 1, xi - r : xi + r + 1].astype(np.float64)
        patch = patch - patch.mean()
        norm = np.linalg.norm(patch)
        if norm < 1e-10:
            continue
        descs.append((patch / norm).reshape(-1))
        kept.append((x, y))
    if not descs:
        return np.empty((0, 2)), np.empty((0, (2 * r + 1) ** 2))
    return np.array(kept, dtype=np.float64), np.array(descs, dtype=np.float64)


def _nearest_two(d2_row: np.ndarray) -> tuple[int, float, float]:
    order = np.argsort(d2_row, kind="stable")
    best = int(order[0])
    d1 = float(d2_row[best])
    d2 = float(d2_row[int(order[1])]) if d2_row.size > 1 else np.inf
    return best, d1, d2


def _ratio_ok(d1: float, d2: float) -> bool:
    if not np.isfinite(d2):
        return True  # single candidate, no distractor
    if d2 <= 0.0:
        return False  # duplicate descriptors, ambiguous
    return np.sqrt(d1 / d2) < LOWE_RATIO


def match_corner_descriptors(
    corners_a: np.ndarray,
    descs_a: np.ndarray,
    corners_b: np.ndarray,
    descs_b: np.ndarray,
) -> np.ndarray:
    """Mutually consistent nearest-neighbor matches with a two-sided ratio test.

    Returns (n, 4) rows (x_a, y_a, x_b, y_b).  Applying the ratio test in
    both directions makes the result symmetric under swapping the inputs.
    """
    if len(descs_a) == 0 or len(descs_b) == 0:
        return np.empty((0, 4), dtype=np.float64)
    d2 = (
        np.sum(descs_a**2, axis=1)[:, None]
        + np.sum(descs_b**2, axis=1)[None, :]
        - 2.0 * (descs_a @ descs_b.T)
    )
    np.maximum(d2, 0.0, out=d2)

    rows = []
    best_b = [_nearest_two(d2[i]) for i in range(d2.shape[0])]
    best_a = [_nearest_two(d2[:, j]) for j in range(d2.shape[1])]
    for i, (j, d1, dd2) in enumerate(best_b):
        if best_a[j][0] != i:
            continue
        if not (_ratio_ok(d1, dd2) and _ratio_ok(best_a[j][1], best_a[j][2])):
            continue
        rows.append((corners_a[i, 0], corners_a[i, 1], corners_b[j, 0], corners_b[j, 1]))
    return np.array(rows, dtype=np.float64) if rows else np.empty((0, 4), dtype=np.float64)


def builtin_match_pair(rgb_a: np.ndarray, rgb_b: np.ndarray) -> np.ndarray:
    """Corner-based matches between two images; empty for textureless pairs."""
    gray_a, gray_b = rgb_to_gray(rgb_a), rgb_to_gray(rgb_b)
    ca, da = patch_descriptors(gray_a, harris_corners(gray_a))
    cb, db = patch_descriptors(gray_b, harris_corners(gray_b))
    return match_corner_descriptors(ca, da, cb, db)


def detect_and_match_keypoints(ds: Dataset, view_a: int, view_b: int) -> np.ndarray:
    """Matches for one view pair, as (n, 4) rows (x_a, y_a, x_b, y_b).

    Precomputed matches supplied with the dataset take precedence and are
    returned verbatim; otherwise the built-in detector runs.  An empty
    result is valid (textureless pair).
    """
    n = ds.view_count
    if not (0 <= view_a < n and 0 <= view_b < n) or view_a == view_b:
        raise DomainError(f"invalid view pair ({view_a}, {view_b}) for {n} views")
    if ds.matches is not None:
        got = ds.matches.get(view_a, view_b)
        if got is not None:
            return got
    return builtin_match_pair(ds.views[view_a].rgb, ds.views[view_b].rgb)
