"""Domain types, their invariants, and the feature-scale conversions.

All types are plain containers: constructors coerce shapes/dtypes but do
not enforce invariants, so that malformed datasets can be loaded and then
inspected.  ``validate_dataset`` is the single authority that checks every
invariant and reports violations with coordinates.

Feature space conventions:
  * low-dim features live in the unit cube; the 0-255 scale exists only
    where external thresholds demand it (mask activation) and for export.
  * color histograms are joint 8x8x8 RGB counts over mask pixels,
    L1-normalized, kept in float64 (disk format is float32).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError

HIST_BINS_PER_CHANNEL = 8
HIST_SIZE = HIST_BINS_PER_CHANNEL ** 3
FEATURE_DIM = 3
FEATURE_SCALE = 255.0

# Default canonical phrase names shipped alongside datasets.
CANONICAL_NAMES = ("object", "stuff", "texture")


def encode_feature(f) -> np.ndarray:
    """Map a unit-cube feature to the 0-255 scale.

    Pure componentwise scaling (no quantization), so decode(encode(f)) == f
    up to float rounding.  Components must lie strictly inside (0, 1).
    """
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != FEATURE_DIM:
        raise DomainError(f"feature must have {FEATURE_DIM} components, got shape {f.shape}")
    if np.any(f <= 0.0) or np.any(f >= 1.0):
        raise DomainError("feature components must lie strictly inside (0, 1)")
    return f * FEATURE_SCALE


def decode_feature(scaled) -> np.ndarray:
    """Inverse of :func:`encode_feature` (0-255 scale back to unit cube)."""
    scaled = np.asarray(scaled, dtype=np.float64)
    if scaled.shape[-1] != FEATURE_DIM:
        raise DomainError(f"feature must have {FEATURE_DIM} components, got shape {scaled.shape}")
    if np.any(scaled <= 0.0) or np.any(scaled >= FEATURE_SCALE):
        raise DomainError(f"scaled components must lie strictly inside (0, {FEATURE_SCALE})")
    return scaled / FEATURE_SCALE


@dataclass
class Camera:
    """Pinhole intrinsics plus a rigid world-to-camera transform.

    Camera looks down +z; a point is visible when its camera-space depth
    exceeds ``near``.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray  # (4, 4) float64, row-major
    near: float = 0.01

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64).reshape(4, 4)

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]


@dataclass
class PosedImage:
    """An RGB image (values in [0, 1], quantized to the 8-bit lattice) with its camera."""

    rgb: np.ndarray  # (H, W, 3) float32
    camera: Camera

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float32)

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]


@dataclass
class ColorHistogram:
    """Joint 8x8x8 RGB histogram, L1-normalized, float64 bins."""

    bins: np.ndarray  # (512,) float64

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.float64).reshape(-1)


@dataclass
class MaskRecord:
    """One segmentation mask in one view, with its semantic payload."""

    view: int
    local: int
    bitmap: np.ndarray  # (H, W) bool
    area: int
    embedding: np.ndarray  # (D,) float32
    histogram: Optional[ColorHistogram] = None
    idx: Optional[int] = None  # object index, unset before mapping

    def __post_init__(self):
        self.bitmap = np.asarray(self.bitmap, dtype=bool)
        self.embedding = np.asarray(self.embedding, dtype=np.float32).reshape(-1)

    @property
    def key(self) -> tuple[int, int]:
        return (self.view, self.local)


@dataclass
class KeypointMatchSet:
    """Precomputed keypoint correspondences, keyed by ordered view pair.

    ``pairs[(a, b)]`` with a < b is an (n, 4) float64 array of rows
    (x_a, y_a, x_b, y_b) in pixel coordinates.
    """

    pairs: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def put(self, view_a: int, view_b: int, coords: np.ndarray) -> None:
        coords = np.asarray(coords, dtype=np.float64).reshape(-1, 4)
        if view_a == view_b:
            raise DomainError("match pair must span two distinct views")
        if view_a > view_b:
            view_a, view_b = view_b, view_a
            coords = coords[:, [2, 3, 0, 1]]
        self.pairs[(view_a, view_b)] = coords

    def get(self, view_a: int, view_b: int) -> Optional[np.ndarray]:
        """Matches oriented as (x in view_a, y in view_a, x in view_b, y in view_b)."""
        if view_a < view_b:
            got = self.pairs.get((view_a, view_b))
            return got
        got = self.pairs.get((view_b, view_a))
        if got is None:
            return None
        return got[:, [2, 3, 0, 1]]

    def __contains__(self, pair: tuple[int, int]) -> bool:
        a, b = pair
        return (min(a, b), max(a, b)) in self.pairs


@dataclass
class DatasetMeta:
    embedding_dim: int
    width: int
    height: int
    view_count: int
    source: str = "unknown"


@dataclass
class Dataset:
    """Views, per-view masks, optional precomputed matches, and metadata."""

    views: list[PosedImage]
    masks: list[list[MaskRecord]]  # masks[t] = masks of view t
    meta: DatasetMeta
    matches: Optional[KeypointMatchSet] = None
    canonical: Optional[dict] = None  # canonical phrase name -> (D,) embedding

    def all_masks(self) -> list[MaskRecord]:
        return [m for per_view in self.masks for m in per_view]

    @property
    def view_count(self) -> int:
        return len(self.views)


@dataclass
class GridCell:
    """One lattice cell: an object's low-dim center and its multi-view embeddings."""

    object_id: int
    center: np.ndarray  # (3,) float64, strictly inside (0, 1)^3
    entries: list[tuple[int, int]] = field(default_factory=list)  # (view, local)
    embeddings: Optional[np.ndarray] = None  # (n, D) unit-normalized float64

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(FEATURE_DIM)

    @property
    def scaled_center(self) -> np.ndarray:
        return self.center * FEATURE_SCALE


@dataclass
class GridLattice:
    """The semantic feature grid: K objects assigned to cells of a cubic lattice."""

    K: int
    side: int
    cells: list[GridCell]
    d: int = FEATURE_DIM

    @property
    def edge(self) -> float:
        return 1.0 / self.side

    def centers(self) -> np.ndarray:
        return np.stack([c.center for c in self.cells], axis=0)


@dataclass
class GaussianCloud:
    """Fixed 3D Gaussian geometry plus trainable per-Gaussian features.

    Arrays are float64 in memory; the disk format is float32.  Only
    ``features`` is ever mutated (by the trainer).
    """

    positions: np.ndarray  # (N, 3)
    scales: np.ndarray  # (N, 3), positive
    rotations: np.ndarray  # (N, 4) unit quaternions (w, x, y, z)
    opacities: np.ndarray  # (N,), strictly inside (0, 1)
    features: np.ndarray  # (N, 3) in [0, 1]

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(-1, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4)
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(-1)
        self.features = np.asarray(self.features, dtype=np.float64).reshape(-1, 3)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(
            self.positions.copy(),
            self.scales.copy(),
            self.rotations.copy(),
            self.opacities.copy(),
            self.features.copy(),
        )


@dataclass
class FeatureMap:
    """A rendered H x W x 3 low-dim feature image for one camera pose."""

    data: np.ndarray  # (H, W, 3) float64 in [0, 1]
    view: Optional[int] = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class MatchParams:
    """Cross-view matching thresholds."""

    tau_kp: int = 4  # min keypoint pair count for a correspondence match
    theta: float = 0.95  # hybrid similarity threshold
    alpha: float = 0.3  # color weight in the hybrid similarity
    window: Optional[int] = None  # prior views scanned; None = all

    def __post_init__(self):
        if self.tau_kp < 1:
            raise DomainError("tau_kp must be >= 1")
        if not (0.0 < self.theta <= 1.0):
            raise DomainError("theta must lie in (0, 1]")
        if not (0.0 <= self.alpha <= 1.0):
            raise DomainError("alpha must lie in [0, 1]")
        if self.window is not None and self.window < 1:
            raise DomainError("window must be >= 1 when set")


@dataclass
class QueryConfig:
    """Query-time thresholds and an optional canonical-embedding override."""

    tau_ac: float = 5.0  # activation distance threshold, 0-255 scale
    canonical: Optional[dict] = None  # name -> (D,) embedding; None = use the field's
    top_n: int = 1
    aggregate: str = "max"  # how a cell's multi-view embeddings combine: max | mean

    def __post_init__(self):
        if self.tau_ac <= 0:
            raise DomainError("tau_ac must be positive")
        if self.top_n < 1:
            raise DomainError("top_n must be >= 1")
        if self.aggregate not in ("max", "mean"):
            raise DomainError("aggregate must be 'max' or 'mean'")
        if self.canonical is not None and len(self.canonical) == 0:
            raise DomainError("canonical override must be non-empty when given")


@dataclass
class TrainConfig:
    """Feature-training schedule.

    ``iterations == 0`` is allowed and means "leave the cloud untouched".
    """

    lam: float = 0.2  # structural-dissimilarity mix weight
    iterations: int = 2000
    step_size: float = 5e-3
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise DomainError("lam must lie in [0, 1]")
        if self.iterations < 0:
            raise DomainError("iterations must be >= 0")
        if self.step_size <= 0:
            raise DomainError("step_size must be positive")


@dataclass(frozen=True)
class Violation:
    """One invariant violation found by the validator."""

    code: str
    where: str
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.where}: {self.message}"


def _check_camera(cam: Camera, where: str, out: list[Violation]) -> None:
    if not (cam.fx > 0 and cam.fy > 0):
        out.append(Violation("camera.focal", where, f"fx/fy must be positive, got ({cam.fx}, {cam.fy})"))
    if cam.near <= 0:
        out.append(Violation("camera.near", where, f"near must be positive, got {cam.near}"))
    w2c = cam.world_to_camera
    if not np.all(np.isfinite(w2c)):
        out.append(Violation("camera.transform", where, "world_to_camera has non-finite entries"))
        return
    R = w2c[:3, :3]
    err = np.abs(R @ R.T - np.eye(3)).max()
    if err > 1e-6:
        out.append(Violation("camera.rotation", where, f"rotation block not orthonormal (max dev {err:.2e})"))
    elif np.linalg.det(R) < 0:
        out.append(Violation("camera.rotation", where, "rotation block has negative determinant"))
    if np.abs(w2c[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-12:
        out.append(Violation("camera.transform", where, "last row must be (0, 0, 0, 1)"))


def validate_histogram(bins: np.ndarray, where: str, out: list[Violation]) -> None:
    if bins.shape != (HIST_SIZE,):
        out.append(Violation("histogram.shape", where, f"expected {HIST_SIZE} bins, got {bins.shape}"))
        return
    if np.any(bins < 0):
        out.append(Violation("histogram.negative", where, "histogram has negative bins"))
    s = float(bins.sum())
    if abs(s - 1.0) > 1e-9:
        out.append(Violation("histogram.sum", where, f"bins sum to {s!r}, expected 1 within 1e-9"))


def validate_cloud(cloud: GaussianCloud, out: Optional[list[Violation]] = None) -> list[Violation]:
    if out is None:
        out = []
    n = len(cloud)
    for name, arr, shape in (
        ("positions", cloud.positions, (n, 3)),
        ("scales", cloud.scales, (n, 3)),
        ("rotations", cloud.rotations, (n, 4)),
        ("opacities", cloud.opacities, (n,)),
        ("features", cloud.features, (n, 3)),
    ):
        if arr.shape != shape:
            out.append(Violation("cloud.shape", f"gaussians.{name}", f"expected {shape}, got {arr.shape}"))
            return out
        if not np.all(np.isfinite(arr)):
            out.append(Violation("cloud.finite", f"gaussians.{name}", "non-finite values"))
    if np.any(cloud.scales <= 0):
        bad = int(np.argmax(np.any(cloud.scales <= 0, axis=1)))
        out.append(Violation("cloud.scale", f"gaussian {bad}", "scales must be positive"))
    qn = np.linalg.norm(cloud.rotations, axis=1)
    if qn.size and np.abs(qn - 1.0).max() > 1e-6:
        bad = int(np.argmax(np.abs(qn - 1.0)))
        out.append(Violation("cloud.quat", f"gaussian {bad}", f"quaternion norm {qn[bad]!r} deviates from 1 by more than 1e-6"))
    if np.any(cloud.opacities <= 0) or np.any(cloud.opacities >= 1):
        bad = int(np.argmax((cloud.opacities <= 0) | (cloud.opacities >= 1)))
        out.append(Violation("cloud.opacity", f"gaussian {bad}", "opacity must lie strictly inside (0, 1)"))
    if cloud.features.size and (cloud.features.min() < 0 or cloud.features.max() > 1):
        out.append(Violation("cloud.feature", "gaussians", "features must lie in [0, 1]"))
    return out


def validate_dataset(ds: Dataset, cloud: Optional[GaussianCloud] = None) -> list[Violation]:
    """Check every dataset invariant; an empty report means valid.

    Pure: identical inputs always yield identical reports.
    """
    out: list[Violation] = []
    if not ds.views:
        out.append(Violation("views.empty", "dataset", "views must be non-empty"))
        return out

    h0, w0 = ds.views[0].rgb.shape[:2]
    if (ds.meta.width, ds.meta.height) != (w0, h0):
        out.append(Violation("meta.size", "meta", f"meta says {ds.meta.width}x{ds.meta.height}, views are {w0}x{h0}"))
    if ds.meta.view_count != len(ds.views):
        out.append(Violation("meta.views", "meta", f"meta says {ds.meta.view_count} views, found {len(ds.views)}"))
    if ds.meta.embedding_dim < 1:
        out.append(Violation("meta.dim", "meta", f"embedding dimension must be >= 1, got {ds.meta.embedding_dim}"))

    for t, view in enumerate(ds.views):
        where = f"view {t}"
        if view.rgb.ndim != 3 or view.rgb.shape[2] != 3:
            out.append(Violation("view.shape", where, f"rgb must be HxWx3, got {view.rgb.shape}"))
            continue
        if view.rgb.shape[:2] != (h0, w0):
            out.append(Violation("view.size", where, f"size {view.rgb.shape[:2]} differs from view 0 {(h0, w0)}"))
        if not np.all(np.isfinite(view.rgb)):
            out.append(Violation("view.finite", where, "rgb has non-finite values"))
        elif view.rgb.size and (view.rgb.min() < 0 or view.rgb.max() > 1):
            out.append(Violation("view.range", where, "rgb values must lie in [0, 1]"))
        _check_camera(view.camera, where, out)

    if len(ds.masks) != len(ds.views):
        out.append(Violation("masks.views", "masks", f"{len(ds.masks)} mask lists for {len(ds.views)} views"))
    for t, per_view in enumerate(ds.masks):
        for m in per_view:
            where = f"mask ({m.view}, {m.local})"
            if m.view != t:
                out.append(Violation("mask.view", where, f"stored under view {t}"))
            if not (0 <= m.view < len(ds.views)):
                out.append(Violation("mask.view", where, "view index out of range"))
                continue
            if m.bitmap.shape != (h0, w0):
                out.append(Violation("mask.shape", where, f"bitmap {m.bitmap.shape} does not match image {(h0, w0)}"))
                continue
            true_area = int(m.bitmap.sum())
            if m.area != true_area:
                out.append(Violation("mask.area", where, f"declared area {m.area}, bitmap has {true_area}"))
            if true_area < 1:
                out.append(Violation("mask.empty", where, "mask area must be >= 1"))
            if m.embedding.shape != (ds.meta.embedding_dim,):
                out.append(Violation("mask.embedding", where, f"embedding length {m.embedding.shape[0]}, expected {ds.meta.embedding_dim}"))
            elif not np.all(np.isfinite(m.embedding)):
                out.append(Violation("mask.embedding", where, "embedding has non-finite values"))
            elif float(np.linalg.norm(m.embedding)) == 0.0:
                out.append(Violation("mask.embedding", where, "embedding norm must be positive"))
            if m.histogram is not None:
                validate_histogram(m.histogram.bins, where, out)

    if ds.matches is not None:
        for (a, b), coords in sorted(ds.matches.pairs.items()):
            where = f"matches ({a}, {b})"
            if not (0 <= a < len(ds.views) and 0 <= b < len(ds.views)):
                out.append(Violation("matches.view", where, "view index out of range"))
                continue
            xs = coords[:, [0, 2]]
            ys = coords[:, [1, 3]]
            if coords.size and (xs.min() < 0 or xs.max() > w0 - 1 or ys.min() < 0 or ys.max() > h0 - 1):
                out.append(Violation("matches.bounds", where, "match coordinates outside image bounds"))
            if coords.shape[0] != np.unique(coords, axis=0).shape[0]:
                out.append(Violation("matches.dup", where, "duplicate match pairs"))

    if ds.canonical is not None:
        for name in sorted(ds.canonical):
            vec = np.asarray(ds.canonical[name], dtype=np.float64).reshape(-1)
            if vec.shape != (ds.meta.embedding_dim,):
                out.append(Violation("canonical.dim", f"canonical {name!r}", f"embedding length {vec.shape[0]}, expected {ds.meta.embedding_dim}"))
            elif float(np.linalg.norm(vec)) == 0.0 or not np.all(np.isfinite(vec)):
                out.append(Violation("canonical.value", f"canonical {name!r}", "embedding must be finite and nonzero"))

    if cloud is not None:
        validate_cloud(cloud, out)
    return out
