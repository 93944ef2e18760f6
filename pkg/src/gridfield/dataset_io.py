"""Bit-exact dataset directory serialization.

Layout::

    meta.json                    embedding dim, image size, view count, source
    views/{t:04}.png             8-bit RGB image
    views/{t:04}.pose.json       intrinsics + row-major 4x4 world-to-camera
    masks/{t:04}/{j:04}.png      1-bit mask per (view, local)
    embeddings.bin               records (view u32, local u32, D f32), sorted
    histograms.bin               optional; records (view u32, local u32, 512 f32)
    matches.bin                  optional; records (va u32, vb u32, xa ya xb yb f32)
    gaussians.bin                per Gaussian: mu[3] s[3] quat[4] opacity f[3], f32
    canonical.bin                optional; canonical phrase embeddings, n rows of D f32

Floats round-trip bit-exactly: images are quantized to the 8-bit lattice,
binary payloads are float32 on disk and exact float64 upcasts in memory,
and pose JSON uses shortest-repr floats.  Histograms are the one derived
payload: when ``histograms.bin`` is absent they are recomputed from the
images (deterministic), and when present they are renormalized in float64
after the float32 upcast so the sum invariant holds.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError
from .ingest import compute_color_histogram
from .scene_data import (
    CANONICAL_NAMES,
    HIST_SIZE,
    Camera,
    ColorHistogram,
    Dataset,
    DatasetMeta,
    GaussianCloud,
    KeypointMatchSet,
    MaskRecord,
    PosedImage,
)

GAUSSIAN_RECORD = np.dtype(
    [
        ("position", "<f4", (3,)),
        ("scale", "<f4", (3,)),
        ("rotation", "<f4", (4,)),
        ("opacity", "<f4"),
        ("feature", "<f4", (3,)),
    ]
)

MATCH_RECORD = np.dtype(
    [
        ("view_a", "<u4"),
        ("view_b", "<u4"),
        ("coords", "<f4", (4,)),
    ]
)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def _load_json(path: Path):
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"unreadable JSON at {path}: {e}") from e


def quantize_rgb(rgb: np.ndarray) -> np.ndarray:
    """Snap float RGB in [0, 1] onto the 8-bit lattice (k/255 values)."""
    u8 = np.clip(np.round(np.asarray(rgb, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    return (u8.astype(np.float32)) / np.float32(255.0)


def _rgb_to_u8(rgb: np.ndarray) -> np.ndarray:
    return np.clip(np.round(rgb.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)


def _u8_to_rgb(u8: np.ndarray) -> np.ndarray:
    return u8.astype(np.float32) / np.float32(255.0)


def save_gaussians(cloud: GaussianCloud, path: Path) -> None:
    rec = np.empty(len(cloud), dtype=GAUSSIAN_RECORD)
    rec["position"] = cloud.positions.astype(np.float32)
    rec["scale"] = cloud.scales.astype(np.float32)
    rec["rotation"] = cloud.rotations.astype(np.float32)
    rec["opacity"] = cloud.opacities.astype(np.float32)
    rec["feature"] = cloud.features.astype(np.float32)
    Path(path).write_bytes(rec.tobytes())


def load_gaussians(path: Path) -> GaussianCloud:
    raw = Path(path).read_bytes()
    if len(raw) % GAUSSIAN_RECORD.itemsize != 0:
        raise FormatError(f"{path}: size {len(raw)} is not a whole number of gaussian records")
    rec = np.frombuffer(raw, dtype=GAUSSIAN_RECORD)
    return GaussianCloud(
        rec["position"].astype(np.float64),
        rec["scale"].astype(np.float64),
        rec["rotation"].astype(np.float64),
        rec["opacity"].astype(np.float64),
        rec["feature"].astype(np.float64),
    )


def _embedding_dtype(dim: int) -> np.dtype:
    return np.dtype([("view", "<u4"), ("local", "<u4"), ("vec", "<f4", (dim,))])


def save_matches(matches: KeypointMatchSet, path: Path) -> None:
    rows = []
    for (a, b) in sorted(matches.pairs):
        for r in matches.pairs[(a, b)]:
            rows.append((a, b, r.astype(np.float32)))
    rec = np.array(rows, dtype=MATCH_RECORD) if rows else np.empty(0, dtype=MATCH_RECORD)
    Path(path).write_bytes(rec.tobytes())


def _save_pose(path: Path, cam: Camera) -> None:
    _dump_json(
        path,
        {
            "fx": cam.fx,
            "fy": cam.fy,
            "cx": cam.cx,
            "cy": cam.cy,
            "near": cam.near,
            "world_to_camera": [float(v) for v in cam.world_to_camera.reshape(-1)],
        },
    )


def _load_pose(path: Path) -> Camera:
    obj = _load_json(path)
    try:
        return Camera(
            fx=float(obj["fx"]),
            fy=float(obj["fy"]),
            cx=float(obj["cx"]),
            cy=float(obj["cy"]),
            near=float(obj["near"]),
            world_to_camera=np.array(obj["world_to_camera"], dtype=np.float64).reshape(4, 4),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed pose file {path}: {e}") from e


def save_dataset(
    ds: Dataset,
    root: Path,
    cloud: GaussianCloud | None = None,
    include_histograms: bool = False,
) -> None:
    """Write the dataset directory.

    Histograms are omitted by default (recomputed on load); pass
    ``include_histograms=True`` to persist externally supplied ones.
    """
    root = Path(root)
    (root / "views").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)

    _dump_json(
        root / "meta.json",
        {
            "embedding_dim": ds.meta.embedding_dim,
            "width": ds.meta.width,
            "height": ds.meta.height,
            "view_count": ds.meta.view_count,
            "source": ds.meta.source,
        },
    )

    for t, view in enumerate(ds.views):
        Image.fromarray(_rgb_to_u8(view.rgb), mode="RGB").save(root / "views" / f"{t:04}.png")
        _save_pose(root / "views" / f"{t:04}.pose.json", view.camera)

    for t, per_view in enumerate(ds.masks):
        mask_dir = root / "masks" / f"{t:04}"
        mask_dir.mkdir(exist_ok=True)
        for m in per_view:
            Image.fromarray(m.bitmap).convert("1").save(mask_dir / f"{m.local:04}.png")

    records = sorted(ds.all_masks(), key=lambda m: m.key)
    dim = ds.meta.embedding_dim
    emb = np.empty(len(records), dtype=_embedding_dtype(dim))
    for i, m in enumerate(records):
        emb[i] = (m.view, m.local, m.embedding.astype(np.float32))
    (root / "embeddings.bin").write_bytes(emb.tobytes())

    if include_histograms:
        hist = np.empty(len(records), dtype=_embedding_dtype(HIST_SIZE))
        for i, m in enumerate(records):
            if m.histogram is None:
                raise FormatError(f"mask {m.key} has no histogram to persist")
            hist[i] = (m.view, m.local, m.histogram.bins.astype(np.float32))
        (root / "histograms.bin").write_bytes(hist.tobytes())

    if ds.matches is not None:
        save_matches(ds.matches, root / "matches.bin")

    if ds.canonical is not None:
        rows = np.stack(
            [np.asarray(ds.canonical[name], dtype=np.float64) for name in CANONICAL_NAMES]
        )
        (root / "canonical.bin").write_bytes(rows.astype("<f4").tobytes())

    if cloud is not None:
        save_gaussians(cloud, root / "gaussians.bin")


def _load_records(path: Path, dim: int, what: str) -> np.ndarray:
    raw = path.read_bytes()
    dtype = _embedding_dtype(dim)
    if len(raw) % dtype.itemsize != 0:
        raise FormatError(f"{path}: size {len(raw)} is not a whole number of {what} records")
    return np.frombuffer(raw, dtype=dtype)


def load_dataset(root: Path, with_gaussians: bool = True) -> tuple[Dataset, GaussianCloud | None]:
    """Read a dataset directory; raises :class:`FormatError` on unreadable payloads."""
    root = Path(root)
    meta_obj = _load_json(root / "meta.json")
    try:
        meta = DatasetMeta(
            embedding_dim=int(meta_obj["embedding_dim"]),
            width=int(meta_obj["width"]),
            height=int(meta_obj["height"]),
            view_count=int(meta_obj["view_count"]),
            source=str(meta_obj.get("source", "unknown")),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed meta.json: {e}") from e

    views: list[PosedImage] = []
    for t in range(meta.view_count):
        img_path = root / "views" / f"{t:04}.png"
        try:
            with Image.open(img_path) as im:
                rgb = _u8_to_rgb(np.asarray(im.convert("RGB"), dtype=np.uint8))
        except (OSError, ValueError) as e:
            raise FormatError(f"unreadable image {img_path}: {e}") from e
        views.append(PosedImage(rgb=rgb, camera=_load_pose(root / "views" / f"{t:04}.pose.json")))

    emb_path = root / "embeddings.bin"
    if not emb_path.exists():
        raise FormatError(f"missing {emb_path}")
    emb = _load_records(emb_path, meta.embedding_dim, "embedding")

    hist_by_key: dict[tuple[int, int], np.ndarray] = {}
    hist_path = root / "histograms.bin"
    if hist_path.exists():
        for rec in _load_records(hist_path, HIST_SIZE, "histogram"):
            bins = rec["vec"].astype(np.float64)
            s = float(bins.sum())
            if np.isfinite(s) and s > 0:
                bins = bins / s
            hist_by_key[(int(rec["view"]), int(rec["local"]))] = bins

    masks: list[list[MaskRecord]] = [[] for _ in range(meta.view_count)]
    for rec in emb:
        t, j = int(rec["view"]), int(rec["local"])
        if t >= meta.view_count:
            raise FormatError(f"embedding record references view {t} beyond view count {meta.view_count}")
        mask_path = root / "masks" / f"{t:04}" / f"{j:04}.png"
        try:
            with Image.open(mask_path) as im:
                bitmap = np.asarray(im.convert("1"), dtype=bool)
        except (OSError, ValueError) as e:
            raise FormatError(f"unreadable mask {mask_path}: {e}") from e
        hist = hist_by_key.get((t, j))
        if hist is None and t < len(views):
            hist = compute_color_histogram(views[t].rgb, bitmap).bins if bitmap.any() else None
        masks[t].append(
            MaskRecord(
                view=t,
                local=j,
                bitmap=bitmap,
                area=int(bitmap.sum()),
                embedding=rec["vec"],
                histogram=ColorHistogram(hist) if hist is not None else None,
            )
        )

    matches = None
    match_path = root / "matches.bin"
    if match_path.exists():
        raw = match_path.read_bytes()
        if len(raw) % MATCH_RECORD.itemsize != 0:
            raise FormatError(f"{match_path}: size {len(raw)} is not a whole number of match records")
        rec = np.frombuffer(raw, dtype=MATCH_RECORD)
        matches = KeypointMatchSet()
        for (a, b) in {(int(r["view_a"]), int(r["view_b"])) for r in rec}:
            sel = (rec["view_a"] == a) & (rec["view_b"] == b)
            matches.put(a, b, rec["coords"][sel].astype(np.float64))

    canonical = None
    canon_path = root / "canonical.bin"
    if canon_path.exists():
        raw = canon_path.read_bytes()
        row = 4 * meta.embedding_dim
        if len(raw) % row != 0:
            raise FormatError(f"{canon_path}: size {len(raw)} is not a whole number of {meta.embedding_dim}-float rows")
        mat = np.frombuffer(raw, dtype="<f4").reshape(-1, meta.embedding_dim).astype(np.float64)
        if mat.shape[0] != len(CANONICAL_NAMES):
            raise FormatError(
                f"{canon_path}: expected {len(CANONICAL_NAMES)} canonical rows, got {mat.shape[0]}"
            )
        canonical = {name: mat[i] for i, name in enumerate(CANONICAL_NAMES)}

    ds = Dataset(views=views, masks=masks, meta=meta, matches=matches, canonical=canonical)

    cloud = None
    if with_gaussians and (root / "gaussians.bin").exists():
        cloud = load_gaussians(root / "gaussians.bin")
    return ds, cloud


def load_embedding_file(path: Path, dim: int) -> np.ndarray:
    """Read a raw embedding file: exactly ``dim`` little-endian float32 values."""
    raw = Path(path).read_bytes()
    if len(raw) != 4 * dim:
        raise FormatError(f"{path}: expected {4 * dim} bytes ({dim} float32), got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def save_embedding_file(path: Path, vec: np.ndarray) -> None:
    Path(path).write_bytes(np.asarray(vec, dtype="<f4").tobytes())
