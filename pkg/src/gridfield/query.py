"""Open-vocabulary lookup against a trained feature field.

A text query arrives as an embedding.  Each lattice cell keeps the
embeddings of the masks that built it; the query is scored against every
cell with a relevancy that softmax-compares the query against canonical
distractor phrases, the best cell's center is the target feature, and
the per-pixel mask is every rendered pixel whose feature sits within a
fixed distance of that center on the 0-255 feature scale.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .scene_data import (
    FEATURE_SCALE,
    Camera,
    Dataset,
    GaussianCloud,
    GridLattice,
    QueryConfig,
)
from .splatting import RenderConfig, render_with_transmittance


def relevancy_score(d_query: float, d_canonical) -> float:
    """Worst-case softmax preference for the query over canonical phrases.

    Equals min_i exp(d_q) / (exp(d_q) + exp(d_ci)), computed in the
    numerically stable sigmoid form.  0.5 exactly when the best canonical
    ties the query.
    """
    d_canonical = np.asarray(d_canonical, dtype=np.float64)
    if d_canonical.size == 0:
        raise DomainError("need at least one canonical similarity")
    gap = float(d_canonical.max()) - float(d_query)
    return float(1.0 / (1.0 + np.exp(gap)))


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise DomainError("embedding must be nonzero")
    return v / n


def score_cells(
    phrase_embedding: np.ndarray,
    lattice: GridLattice,
    canonical: dict[str, np.ndarray],
    aggregate: str = "max",
) -> np.ndarray:
    """Relevancy of one phrase for every lattice cell.

    Per stored embedding e: sigma(cos(e, q) - max_i cos(e, c_i)); cells
    aggregate over their stored embeddings by ``max`` or ``mean``.
    """
    if aggregate not in ("max", "mean"):
        raise DomainError(f"unknown aggregate {aggregate!r}")
    if not canonical:
        raise DomainError("canonical phrase embeddings are empty")
    q = _unit(phrase_embedding)
    C = np.stack([_unit(canonical[name]) for name in sorted(canonical)])
    scores = np.empty(lattice.K, dtype=np.float64)
    for cell in lattice.cells:
        dq = cell.embeddings @ q
        dc = (cell.embeddings @ C.T).max(axis=1)
        r = 1.0 / (1.0 + np.exp(dc - dq))
        scores[cell.object_id] = r.max() if aggregate == "max" else r.mean()
    return scores


def extract_target_mask(
    feature_map: np.ndarray, center: np.ndarray, tau_ac: float = 5.0
) -> tuple[np.ndarray, np.ndarray]:
    """Threshold the rendered features around a cell center.

    Distances are Euclidean on the 0-255 feature scale; the mask keeps
    pixels strictly below ``tau_ac``.  Returns (mask, distance map).
    """
    fm = np.asarray(feature_map, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    dist = FEATURE_SCALE * np.linalg.norm(fm - center, axis=-1)
    return dist < tau_ac, dist


@dataclass
class QueryResult:
    view: int
    scores: np.ndarray  # (K,) relevancy per cell
    object_ids: list[int]  # selected cells, best first
    mask: np.ndarray  # (H, W) bool, union over selected cells
    distance: np.ndarray  # (H, W) distance to the best cell's center
    best_pixel: tuple[int, int]  # (x, y) minimizer of the distance map
    from_cache: bool
    timings_ms: dict[str, float] = field(default_factory=dict)


class SemanticField:
    """Trained scene wrapper with per-view render caching."""

    def __init__(
        self,
        cloud: GaussianCloud,
        cameras: list[Camera],
        width: int,
        height: int,
        lattice: GridLattice,
        canonical: dict[str, np.ndarray],
        render_cfg: RenderConfig | None = None,
    ):
        if not cameras:
            raise DomainError("need at least one camera")
        self.cloud = cloud
        self.cameras = cameras
        self.width = width
        self.height = height
        self.lattice = lattice
        self.canonical = dict(canonical)
        self.render_cfg = render_cfg or RenderConfig()
        self._render_cache: dict[int, np.ndarray] = {}

    @classmethod
    def from_dataset(
        cls,
        dataset: Dataset,
        cloud: GaussianCloud,
        lattice: GridLattice,
        render_cfg: RenderConfig | None = None,
    ) -> "SemanticField":
        return cls(
            cloud=cloud,
            cameras=[v.camera for v in dataset.views],
            width=dataset.meta.width,
            height=dataset.meta.height,
            lattice=lattice,
            canonical=dataset.canonical,
            render_cfg=render_cfg,
        )

    @property
    def view_count(self) -> int:
        return len(self.cameras)

    def render_view(self, view: int) -> tuple[np.ndarray, bool]:
        """Rendered feature map for one view, memoized per field instance."""
        if not (0 <= view < self.view_count):
            raise DomainError(f"view {view} out of range 0..{self.view_count - 1}")
        cached = view in self._render_cache
        if not cached:
            out, _ = render_with_transmittance(
                self.cloud, self.cameras[view], self.width, self.height, self.render_cfg
            )
            self._render_cache[view] = out
        return self._render_cache[view], cached

    def invalidate_cache(self) -> None:
        self._render_cache.clear()

    def query(
        self, phrase_embedding: np.ndarray, view: int, cfg: QueryConfig | None = None
    ) -> QueryResult:
        cfg = cfg or QueryConfig()
        canonical = cfg.canonical if cfg.canonical is not None else self.canonical
        t0 = time.perf_counter()
        fm, cached = self.render_view(view)
        t1 = time.perf_counter()
        scores = score_cells(phrase_embedding, self.lattice, canonical, cfg.aggregate)
        # stable best-first order: score descending, object id ascending on ties
        order = np.lexsort((np.arange(self.lattice.K), -scores))
        top = [int(o) for o in order[: max(1, cfg.top_n)]]
        t2 = time.perf_counter()
        mask = np.zeros((self.height, self.width), dtype=bool)
        best_dist = None
        for rank, oid in enumerate(top):
            m, dist = extract_target_mask(fm, self.lattice.cells[oid].center, cfg.tau_ac)
            mask |= m
            if rank == 0:
                best_dist = dist
        flat = int(np.argmin(best_dist))
        py, px = divmod(flat, self.width)
        t3 = time.perf_counter()
        return QueryResult(
            view=view,
            scores=scores,
            object_ids=top,
            mask=mask,
            distance=best_dist,
            best_pixel=(px, py),
            from_cache=cached,
            timings_ms={
                "render": (t1 - t0) * 1e3,
                "score": (t2 - t1) * 1e3,
                "extract": (t3 - t2) * 1e3,
                "total": (t3 - t0) * 1e3,
            },
        )
