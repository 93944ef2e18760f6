"""Cross-view mask grouping and feature-grid construction.

Masks from different views that show the same physical object are joined
into one group.  View 0 seeds the groups; each later mask inherits a
group by keypoint-correspondence count when that evidence is strong
enough, falls back to appearance similarity against all previously
assigned masks, and otherwise opens a new group.  Groups are then laid
out on a cubic lattice inside the unit cube, giving every object a
distinct low-dimensional feature (its cell center), and per-view target
maps are baked by painting each mask with its group's cell center.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError
from .scene_data import (
    ColorHistogram,
    Dataset,
    GridCell,
    GridLattice,
    MaskRecord,
    MatchParams,
)

PROVENANCE_INIT = "init"
PROVENANCE_KEYPOINT = "keypoint"
PROVENANCE_SIMILARITY = "similarity"
PROVENANCE_NEW = "new"


def similarity_clip(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two embeddings; identical inputs give exactly 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    if np.array_equal(a, b):
        if not np.any(a):
            raise DomainError("embedding must be nonzero")
        return 1.0
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DomainError("embedding must be nonzero")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def similarity_color(a: ColorHistogram, b: ColorHistogram) -> float:
    """Bhattacharyya coefficient between color histograms; identical inputs give exactly 1."""
    ha = a.bins if isinstance(a, ColorHistogram) else np.asarray(a, dtype=np.float64)
    hb = b.bins if isinstance(b, ColorHistogram) else np.asarray(b, dtype=np.float64)
    if ha.shape != hb.shape:
        raise DomainError(f"histogram shapes differ: {ha.shape} vs {hb.shape}")
    if np.any(ha < 0.0) or np.any(hb < 0.0):
        raise DomainError("histogram bins must be nonnegative")
    for bins in (ha, hb):
        if abs(float(bins.sum()) - 1.0) > 1e-6:
            raise DomainError("histogram bins must sum to 1 within 1e-6")
    if np.array_equal(ha, hb):
        return 1.0
    return float(np.clip(np.sqrt(ha * hb).sum(), 0.0, 1.0))


def hybrid_similarity(rec_a: MaskRecord, rec_b: MaskRecord, alpha: float = 0.3) -> float:
    """Color/embedding blend: alpha * color + (1 - alpha) * embedding.

    Written as s + alpha * (c - s) so alpha = 0 reproduces the embedding
    similarity exactly and identical records score exactly 1.
    """
    if not (0.0 <= alpha <= 1.0):
        raise DomainError("alpha must lie in [0, 1]")
    s = similarity_clip(rec_a.embedding, rec_b.embedding)
    c = similarity_color(rec_a.histogram, rec_b.histogram)
    return s + alpha * (c - s)


def count_mask_correspondences(pairs: np.ndarray, bitmap_a: np.ndarray, bitmap_b: np.ndarray) -> int:
    """Number of keypoint pairs landing inside both masks.

    ``pairs`` is (n, 4) rows [x_a, y_a, x_b, y_b]; coordinates are rounded
    to the nearest pixel, out-of-image points never count.
    """
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 4)
    if pairs.shape[0] == 0:
        return 0
    xa = np.rint(pairs[:, 0]).astype(np.int64)
    ya = np.rint(pairs[:, 1]).astype(np.int64)
    xb = np.rint(pairs[:, 2]).astype(np.int64)
    yb = np.rint(pairs[:, 3]).astype(np.int64)
    ha, wa = bitmap_a.shape
    hb, wb = bitmap_b.shape
    ok = (
        (xa >= 0) & (xa < wa) & (ya >= 0) & (ya < ha)
        & (xb >= 0) & (xb < wb) & (yb >= 0) & (yb < hb)
    )
    hits = bitmap_a[ya[ok], xa[ok]] & bitmap_b[yb[ok], xb[ok]]
    return int(np.count_nonzero(hits))


@dataclass
class MappingResult:
    """Group assignment for every mask, keyed by (view, local)."""

    idx: dict[tuple[int, int], int]
    provenance: dict[tuple[int, int], str]
    K: int
    params: MatchParams = field(default_factory=MatchParams)

    def groups(self) -> dict[int, list[tuple[int, int]]]:
        out: dict[int, list[tuple[int, int]]] = {i: [] for i in range(self.K)}
        for key in sorted(self.idx):
            out[self.idx[key]].append(key)
        return out


def cross_view_grid_mapping(
    dataset: Dataset, params: MatchParams | None = None, use_keypoints: bool = True
) -> MappingResult:
    """Assign every mask a group index shared across views.

    View 0 masks define groups 0..m0-1.  Later views are processed in
    order; within a view every mask is matched against the pool of masks
    from *earlier* views only, and the whole view's assignments join the
    pool afterward, so masks from one view can never merge with each
    other.  Preference order per mask: keypoint inheritance (count of
    shared correspondences >= tau_kp, highest count wins, earliest
    (view, local) key on ties), then appearance similarity (best hybrid
    score >= theta), then a brand-new group.
    """
    params = params or MatchParams()
    if dataset.view_count == 0 or all(len(m) == 0 for m in dataset.masks):
        raise DomainError("nothing to map: dataset has no masks")

    idx: dict[tuple[int, int], int] = {}
    provenance: dict[tuple[int, int], str] = {}
    pool: list[MaskRecord] = []

    for rec in dataset.masks[0]:
        idx[rec.key] = rec.local
        provenance[rec.key] = PROVENANCE_INIT
        pool.append(rec)
    K = len(dataset.masks[0])

    for t in range(1, dataset.view_count):
        if params.window is None:
            candidates = pool
        else:
            candidates = [r for r in pool if r.view >= t - params.window]
        batch: list[MaskRecord] = []
        for rec in dataset.masks[t]:
            chosen = None
            if use_keypoints and dataset.matches is not None:
                best_count = 0
                for cand in candidates:
                    pairs = dataset.matches.get(cand.view, t)
                    if pairs is None:
                        continue
                    n = count_mask_correspondences(pairs, cand.bitmap, rec.bitmap)
                    if n >= params.tau_kp and n > best_count:
                        best_count = n
                        chosen = cand
                if chosen is not None:
                    idx[rec.key] = idx[chosen.key]
                    provenance[rec.key] = PROVENANCE_KEYPOINT
            if chosen is None:
                best_sim = -np.inf
                best_cand = None
                for cand in candidates:
                    sim = hybrid_similarity(rec, cand, params.alpha)
                    if sim > best_sim:
                        best_sim = sim
                        best_cand = cand
                if best_cand is not None and best_sim >= params.theta:
                    idx[rec.key] = idx[best_cand.key]
                    provenance[rec.key] = PROVENANCE_SIMILARITY
                else:
                    idx[rec.key] = K
                    provenance[rec.key] = PROVENANCE_NEW
                    K += 1
            batch.append(rec)
        pool.extend(batch)

    return MappingResult(idx=idx, provenance=provenance, K=K, params=params)


def apply_mapping(dataset: Dataset, result: MappingResult) -> None:
    """Stamp each mask record's group index in place."""
    for rec in dataset.all_masks():
        rec.idx = result.idx[rec.key]


def lattice_side(K: int) -> int:
    """Smallest integer edge count whose cube holds K cells."""
    if K < 1:
        raise DomainError("need at least one group")
    side = 1
    while side**3 < K:
        side += 1
    return side


def lattice_coords(o: int, side: int) -> tuple[int, int, int]:
    """Unrank cell o on a side^3 lattice; the last axis varies fastest."""
    return o // (side * side), (o // side) % side, o % side


def build_lattice(result: MappingResult, dataset: Dataset) -> GridLattice:
    """Place each group at a distinct cell center inside the unit cube."""
    side = lattice_side(result.K)
    groups = result.groups()
    by_key = {rec.key: rec for rec in dataset.all_masks()}
    cells = []
    for o in range(result.K):
        u, v, w = lattice_coords(o, side)
        center = np.array(
            [(u + 0.5) / side, (v + 0.5) / side, (w + 0.5) / side], dtype=np.float64
        )
        entries = groups[o]
        if not entries:
            raise DomainError(f"group {o} has no member masks")
        embs = np.stack(
            [np.asarray(by_key[k].embedding, dtype=np.float64) for k in entries]
        )
        norms = np.linalg.norm(embs, axis=1, keepdims=True)
        if np.any(norms == 0.0):
            raise DomainError("embedding must be nonzero")
        cells.append(
            GridCell(object_id=o, center=center, entries=list(entries), embeddings=embs / norms)
        )
    return GridLattice(K=result.K, side=side, cells=cells)


def bake_feature_maps(
    dataset: Dataset, result: MappingResult, lattice: GridLattice
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-view supervision targets: each pixel takes its mask's cell center.

    Masks are painted smallest area first (ties by key) and a painted
    pixel is never overwritten, so nested or overlapping masks keep their
    finer structure.  Returns (targets, coverages): float maps in [0, 1]
    and boolean masks of supervised pixels.
    """
    h, w = dataset.meta.height, dataset.meta.width
    targets: list[np.ndarray] = []
    coverages: list[np.ndarray] = []
    for t in range(dataset.view_count):
        canvas = np.zeros((h, w, 3), dtype=np.float64)
        painted = np.zeros((h, w), dtype=bool)
        for rec in sorted(dataset.masks[t], key=lambda r: (r.area, r.key)):
            region = rec.bitmap & ~painted
            canvas[region] = lattice.cells[result.idx[rec.key]].center
            painted |= rec.bitmap
        targets.append(canvas)
        coverages.append(painted)
    return targets, coverages


def save_mapping(result: MappingResult, path: str | Path) -> None:
    payload = {
        "K": result.K,
        "side": lattice_side(result.K),
        "params": {
            "tau_kp": result.params.tau_kp,
            "theta": result.params.theta,
            "alpha": result.params.alpha,
            "window": result.params.window,
        },
        "masks": [
            {
                "view": view,
                "local": local,
                "idx": result.idx[(view, local)],
                "provenance": result.provenance[(view, local)],
            }
            for view, local in sorted(result.idx)
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_mapping(path: str | Path) -> MappingResult:
    try:
        payload = json.loads(Path(path).read_text())
        idx = {(m["view"], m["local"]): m["idx"] for m in payload["masks"]}
        provenance = {(m["view"], m["local"]): m["provenance"] for m in payload["masks"]}
        params = MatchParams(**payload["params"])
        return MappingResult(idx=idx, provenance=provenance, K=payload["K"], params=params)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"unreadable mapping file {path}: {exc}") from exc
