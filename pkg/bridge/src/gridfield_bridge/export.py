"""End-to-end extraction: posed images in, dataset directory out.

Writes are atomic at the directory level: everything lands in a sibling
temp directory that is renamed into place only after the last byte is
written. Any failure removes the temp directory, so consumers never see
a partial dataset.
"""

from __future__ import annotations

import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import make_encoder
from .formats import (
    BridgeFormatError,
    PosedInput,
    load_image,
    load_poses,
    write_canonical,
    write_embeddings,
    write_masks,
    write_meta,
    write_view,
)
from .segmenter import make_segmenter


@dataclass(frozen=True)
class ExtractionConfig:
    """Everything one export run needs."""

    images_dir: Path
    poses_path: Path
    out_dir: Path
    segmenter: str = "grid-felz"
    encoder: str = "hash-proj"
    grid: int = 32
    dim: int = 32
    min_area_frac: float = 0.0005
    source: str = ""
    gaussians: Path | None = None

    def __post_init__(self):
        if self.grid < 1:
            raise ValueError(f"prompt grid size must be >= 1, got {self.grid}")
        if self.dim < 1:
            raise ValueError(f"embedding dimension must be >= 1, got {self.dim}")


@dataclass(frozen=True)
class ExportReport:
    out_dir: Path
    views: int
    dim: int
    masks_per_view: list[int] = field(default_factory=list)

    @property
    def total_masks(self) -> int:
        return sum(self.masks_per_view)


def _resolve_inputs(cfg: ExtractionConfig) -> list[tuple[Path, PosedInput]]:
    entries = load_poses(cfg.poses_path)
    resolved = []
    for ent in entries:
        path = Path(cfg.images_dir) / ent.file
        if not path.is_file():
            raise BridgeFormatError(f"listed image does not exist: {path}")
        resolved.append((path, ent))
    return resolved


def export_dataset(cfg: ExtractionConfig) -> ExportReport:
    out = Path(cfg.out_dir)
    if out.exists():
        raise BridgeFormatError(f"output directory already exists: {out}")

    # Anything that can fail cheaply fails before the first write: input
    # listing, image existence, and model construction.
    inputs = _resolve_inputs(cfg)
    segmenter = make_segmenter(cfg.segmenter, cfg.grid, cfg.min_area_frac)
    encoder = make_encoder(cfg.encoder, cfg.dim)
    dim = encoder.dim
    gaussians = Path(cfg.gaussians) if cfg.gaussians is not None else None
    if gaussians is not None and not gaussians.is_file():
        raise BridgeFormatError(f"gaussians file does not exist: {gaussians}")
    source = cfg.source or f"bridge/{segmenter.variant}+{encoder.variant}"

    tmp = out.with_name(f"{out.name}.tmp-{os.getpid()}")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        size: tuple[int, int] | None = None
        records: list[tuple[int, int, np.ndarray]] = []
        masks_per_view: list[int] = []
        for t, (img_path, ent) in enumerate(inputs):
            rgb = load_image(img_path)
            if size is None:
                size = rgb.shape[:2]
            elif rgb.shape[:2] != size:
                raise BridgeFormatError(
                    f"{img_path}: size {rgb.shape[:2]} differs from first image {size}"
                )
            write_view(tmp, t, rgb, ent.pose)
            bitmaps = segmenter.segment(rgb)
            if not bitmaps:
                raise BridgeFormatError(f"{img_path}: segmentation produced no regions")
            write_masks(tmp, t, bitmaps)
            for j, bitmap in enumerate(bitmaps):
                records.append((t, j, encoder.embed_region(rgb, bitmap)))
            masks_per_view.append(len(bitmaps))

        assert size is not None
        write_embeddings(tmp, records, dim)
        write_canonical(tmp, encoder.canonical_rows(), dim)
        write_meta(tmp, dim, size[1], size[0], len(inputs), source)
        if gaussians is not None:
            shutil.copyfile(gaussians, tmp / "gaussians.bin")
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return ExportReport(out_dir=out, views=len(inputs), dim=dim, masks_per_view=masks_per_view)
