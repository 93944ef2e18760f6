"""Deterministic whole-image region proposals.

The default backend partitions each view with graph-based segmentation
(no randomness, no weights). The prompt-grid size steers granularity the
same way a denser point-prompt lattice would: the target region area is
the image area divided by grid^2. Regions smaller than the area floor
are dropped; surviving regions become the per-view masks, ordered by
first pixel in raster scan so local indices are stable across reruns.
"""

from __future__ import annotations

from typing import Callable, Protocol

import numpy as np
from skimage.segmentation import felzenszwalb

from .encoder import ModelUnavailableError


class Segmenter(Protocol):
    variant: str

    def segment(self, rgb_u8: np.ndarray) -> list[np.ndarray]: ...


class GridPromptSegmenter:
    """Felzenszwalb partition tuned by a virtual prompt-grid size."""

    def __init__(self, grid: int = 32, min_area_frac: float = 0.0005):
        if grid < 1:
            raise ValueError(f"prompt grid size must be >= 1, got {grid}")
        if not 0.0 <= min_area_frac < 1.0:
            raise ValueError(f"min area fraction must be in [0, 1), got {min_area_frac}")
        self.grid = int(grid)
        self.min_area_frac = float(min_area_frac)
        self.variant = f"grid-felz-{grid}"

    def segment(self, rgb_u8: np.ndarray) -> list[np.ndarray]:
        rgb = np.asarray(rgb_u8)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError(f"image must be H x W x 3, got {rgb.shape}")
        h, w = rgb.shape[:2]
        target_area = max(1.0, (h * w) / float(self.grid * self.grid))
        floor = max(1, int(round(self.min_area_frac * h * w)))
        # Regions under a quarter of the target area are merged upstream
        # rather than emitted, mirroring how sparser prompts skip slivers.
        min_size = max(floor, int(target_area / 4), 4)
        labels = felzenszwalb(rgb, scale=target_area, sigma=0.6, min_size=min_size)
        order = _labels_in_raster_order(labels)
        masks: list[np.ndarray] = []
        for lab in order:
            bitmap = labels == lab
            if int(bitmap.sum()) >= floor:
                masks.append(bitmap)
        return masks


def _labels_in_raster_order(labels: np.ndarray) -> list[int]:
    flat = labels.ravel()
    uniq, first = np.unique(flat, return_index=True)
    return [int(lab) for _, lab in sorted(zip(first, uniq))]


def _unavailable(name: str, needs: str) -> Callable[[int, float], Segmenter]:
    def factory(grid: int, min_area_frac: float) -> Segmenter:
        raise ModelUnavailableError(
            f"segmenter variant {name!r} needs {needs}, which is not installed"
        )

    return factory


_SEGMENTER_VARIANTS: dict[str, Callable[[int, float], Segmenter]] = {
    "grid-felz": lambda grid, min_area_frac: GridPromptSegmenter(grid, min_area_frac),
    # Promptable-model variants require their own package and checkpoint;
    # they fail at construction so exports abort before writing.
    "sam-vit-b": _unavailable("sam-vit-b", "the segment-anything package and a checkpoint"),
    "sam-vit-h": _unavailable("sam-vit-h", "the segment-anything package and a checkpoint"),
}


def register_segmenter_variant(name: str, factory: Callable[[int, float], Segmenter]) -> None:
    """Expose a custom segmenter under ``--segmenter name``."""
    _SEGMENTER_VARIANTS[name] = factory


def make_segmenter(variant: str, grid: int, min_area_frac: float) -> Segmenter:
    try:
        factory = _SEGMENTER_VARIANTS[variant]
    except KeyError:
        known = ", ".join(sorted(_SEGMENTER_VARIANTS))
        raise ValueError(f"unknown segmenter variant {variant!r} (choices: {known})") from None
    return factory(grid, min_area_frac)
