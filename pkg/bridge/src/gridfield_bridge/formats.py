"""Standalone writer for the gridfield dataset directory layout.

The bridge deliberately does not import gridfield; it reproduces the
on-disk contract so its output can be consumed by ``gridfield ingest``
and the rest of the pipeline:

    meta.json                    embedding dim, image size, view count, source
    views/{t:04}.png             8-bit RGB image
    views/{t:04}.pose.json       intrinsics + row-major 4x4 world-to-camera
    masks/{t:04}/{j:04}.png      1-bit mask per (view, local)
    embeddings.bin               records (view u32, local u32, D f32), sorted
    canonical.bin                3 rows of D f32: "object", "stuff", "texture"
    gaussians.bin                optional passthrough copy

Histograms and keypoint matches are omitted: the consumer recomputes
histograms from the images and ``gridfield match`` generates matches.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

CANONICAL_NAMES = ("object", "stuff", "texture")

POSE_KEYS = ("fx", "fy", "cx", "cy", "near", "world_to_camera")


class BridgeFormatError(ValueError):
    """Raised for malformed bridge inputs (poses file, images, sizes)."""


@dataclass(frozen=True)
class Pose:
    """Pinhole intrinsics plus a rigid world-to-camera transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    near: float
    world_to_camera: np.ndarray  # 4x4 float64

    def validated(self, where: str) -> "Pose":
        if not (self.fx > 0 and self.fy > 0):
            raise BridgeFormatError(f"{where}: fx/fy must be positive, got ({self.fx}, {self.fy})")
        if not self.near > 0:
            raise BridgeFormatError(f"{where}: near must be positive, got {self.near}")
        w2c = np.asarray(self.world_to_camera, dtype=np.float64)
        if w2c.shape != (4, 4) or not np.all(np.isfinite(w2c)):
            raise BridgeFormatError(f"{where}: world_to_camera must be a finite 4x4 matrix")
        rot = w2c[:3, :3]
        # Same tolerances the consumer's validator applies, so a bad pose
        # fails here instead of at ingest time.
        if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-6:
            raise BridgeFormatError(f"{where}: rotation block is not orthonormal")
        if np.linalg.det(rot) < 0:
            raise BridgeFormatError(f"{where}: rotation block has negative determinant")
        if np.abs(w2c[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-12:
            raise BridgeFormatError(f"{where}: last row must be (0, 0, 0, 1)")
        return self


@dataclass(frozen=True)
class PosedInput:
    """One input image path with its camera pose."""

    file: str
    pose: Pose


def dump_json(path: Path, obj: dict) -> None:
    """The consumer parses JSON; compact sorted form keeps reruns byte-identical."""
    Path(path).write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def embedding_dtype(dim: int) -> np.dtype:
    return np.dtype([("view", "<u4"), ("local", "<u4"), ("vec", "<f4", (dim,))])


def load_poses(path: Path) -> list[PosedInput]:
    """Parse the bridge input manifest.

    Format: ``{"images": [{"file", "fx", "fy", "cx", "cy", "near",
    "world_to_camera": [16 floats row-major]}, ...]}``.
    """
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise BridgeFormatError(f"unreadable poses file {path}: {e}") from e
    entries = obj.get("images") if isinstance(obj, dict) else None
    if not isinstance(entries, list) or not entries:
        raise BridgeFormatError(f"{path}: expected a non-empty \"images\" list")
    out: list[PosedInput] = []
    for i, ent in enumerate(entries):
        where = f"{path} images[{i}]"
        if not isinstance(ent, dict):
            raise BridgeFormatError(f"{where}: expected an object")
        try:
            mat = np.array(ent["world_to_camera"], dtype=np.float64).reshape(4, 4)
            pose = Pose(
                fx=float(ent["fx"]),
                fy=float(ent["fy"]),
                cx=float(ent["cx"]),
                cy=float(ent["cy"]),
                near=float(ent["near"]),
                world_to_camera=mat,
            ).validated(where)
            file = str(ent["file"])
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, BridgeFormatError):
                raise
            raise BridgeFormatError(f"{where}: {e}") from e
        if not file:
            raise BridgeFormatError(f"{where}: empty file name")
        out.append(PosedInput(file=file, pose=pose))
    return out


def load_image(path: Path) -> np.ndarray:
    """Read an image as H x W x 3 uint8."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise BridgeFormatError(f"unreadable image {path}: {e}") from e


def write_meta(root: Path, dim: int, width: int, height: int, views: int, source: str) -> None:
    dump_json(
        root / "meta.json",
        {
            "embedding_dim": dim,
            "width": width,
            "height": height,
            "view_count": views,
            "source": source,
        },
    )


def write_view(root: Path, t: int, rgb_u8: np.ndarray, pose: Pose) -> None:
    views = root / "views"
    views.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb_u8, mode="RGB").save(views / f"{t:04}.png")
    flat = [float(v) for v in np.asarray(pose.world_to_camera, dtype=np.float64).reshape(-1)]
    dump_json(
        views / f"{t:04}.pose.json",
        {
            "fx": pose.fx,
            "fy": pose.fy,
            "cx": pose.cx,
            "cy": pose.cy,
            "near": pose.near,
            "world_to_camera": flat,
        },
    )


def write_masks(root: Path, t: int, bitmaps: list[np.ndarray]) -> None:
    mask_dir = root / "masks" / f"{t:04}"
    mask_dir.mkdir(parents=True, exist_ok=True)
    for j, bitmap in enumerate(bitmaps):
        Image.fromarray(np.asarray(bitmap, dtype=bool)).convert("1").save(mask_dir / f"{j:04}.png")


def write_embeddings(root: Path, records: list[tuple[int, int, np.ndarray]], dim: int) -> None:
    """``records`` holds (view, local, vector); written sorted by (view, local)."""
    rec = np.empty(len(records), dtype=embedding_dtype(dim))
    for i, (t, j, vec) in enumerate(sorted(records, key=lambda r: (r[0], r[1]))):
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.shape[0] != dim:
            raise BridgeFormatError(f"embedding ({t}, {j}) has length {vec.shape[0]}, expected {dim}")
        if not np.all(np.isfinite(vec)) or math.isclose(float(np.linalg.norm(vec)), 0.0):
            raise BridgeFormatError(f"embedding ({t}, {j}) must be finite with positive norm")
        rec[i] = (t, j, vec.astype(np.float32))
    (root / "embeddings.bin").write_bytes(rec.tobytes())


def write_canonical(root: Path, rows: dict[str, np.ndarray], dim: int) -> None:
    """Exactly the three canonical phrase vectors, in fixed name order."""
    missing = [n for n in CANONICAL_NAMES if n not in rows]
    if missing:
        raise BridgeFormatError(f"canonical rows missing {missing}")
    mat = np.stack([np.asarray(rows[n], dtype=np.float64).reshape(-1) for n in CANONICAL_NAMES])
    if mat.shape != (len(CANONICAL_NAMES), dim):
        raise BridgeFormatError(f"canonical rows must be {len(CANONICAL_NAMES)} x {dim}, got {mat.shape}")
    (root / "canonical.bin").write_bytes(mat.astype("<f4").tobytes())
