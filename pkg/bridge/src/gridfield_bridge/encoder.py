"""Text and mask-region embedding backends.

The default backend needs no model weights: prompts hash to seeded unit
vectors and regions project fixed color/shape statistics through a frozen
random matrix. Both are deterministic, so exports and query embeddings
reproduce bit-for-bit. Heavyweight encoder variants plug in through the
registry and must fail at construction time when their models cannot be
loaded, which lets the exporter abort before writing anything.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Protocol

import numpy as np

from .formats import CANONICAL_NAMES


class ModelUnavailableError(RuntimeError):
    """An encoder or segmenter variant whose model cannot be loaded."""


class Encoder(Protocol):
    dim: int
    variant: str

    def embed_text(self, prompt: str) -> np.ndarray: ...

    def embed_region(self, rgb_u8: np.ndarray, bitmap: np.ndarray) -> np.ndarray: ...


# Descriptor layout: mean RGB (3) + std RGB (3) + sqrt area fraction (1)
# + bbox center and extent (4) + 3x3x3 color histogram (27).
_DESCRIPTOR_DIM = 38
_PROJECTION_SEED = 0x67726964


def _unit(vec: np.ndarray, what: str) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if not np.isfinite(norm) or norm < 1e-12:
        raise ValueError(f"{what} produced a degenerate embedding")
    return vec / norm


class HashProjectionEncoder:
    """Deterministic weight-free encoder.

    Text: sha256 of the stripped prompt seeds a Gaussian draw of length
    ``dim``, normalized to unit length. Region: a fixed seeded projection
    of color and shape statistics, normalized to unit length. Same object
    seen from nearby views yields nearby vectors because the statistics
    barely move.
    """

    def __init__(self, dim: int = 32):
        if dim < 1:
            raise ValueError(f"embedding dimension must be >= 1, got {dim}")
        self.dim = int(dim)
        self.variant = f"hash-proj-{dim}"
        rng = np.random.default_rng(_PROJECTION_SEED)
        self._projection = rng.standard_normal((self.dim, _DESCRIPTOR_DIM))

    def embed_text(self, prompt: str) -> np.ndarray:
        text = prompt.strip()
        if not text:
            raise ValueError("prompt must be non-empty")
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
        vec = np.random.default_rng(seed).standard_normal(self.dim)
        return _unit(vec, f"prompt {text!r}")

    def embed_region(self, rgb_u8: np.ndarray, bitmap: np.ndarray) -> np.ndarray:
        rgb = np.asarray(rgb_u8, dtype=np.float64) / 255.0
        mask = np.asarray(bitmap, dtype=bool)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError(f"image must be H x W x 3, got {rgb.shape}")
        if mask.shape != rgb.shape[:2]:
            raise ValueError(f"mask {mask.shape} does not match image {rgb.shape[:2]}")
        area = int(mask.sum())
        if area < 1:
            raise ValueError("region must contain at least one pixel")

        h, w = mask.shape
        pix = rgb[mask]
        ys, xs = np.nonzero(mask)
        bbox = np.array(
            [
                (xs.min() + xs.max()) / 2.0 / max(w - 1, 1),
                (ys.min() + ys.max()) / 2.0 / max(h - 1, 1),
                (xs.max() - xs.min() + 1) / w,
                (ys.max() - ys.min() + 1) / h,
            ]
        )
        # 3 bins per channel keeps the histogram stable under mild noise.
        quant = np.minimum((pix * 3).astype(np.int64), 2)
        flat = quant[:, 0] * 9 + quant[:, 1] * 3 + quant[:, 2]
        hist = np.bincount(flat, minlength=27) / area
        desc = np.concatenate(
            [pix.mean(axis=0), pix.std(axis=0), [np.sqrt(area / (h * w))], bbox, hist]
        )
        return _unit(self._projection @ desc, "region")

    def canonical_rows(self) -> dict[str, np.ndarray]:
        return {name: self.embed_text(name) for name in CANONICAL_NAMES}


class PretrainedEncoder:
    """Adapter for transformer vision-language checkpoints.

    Construction loads the model; any import or checkpoint failure raises
    :class:`ModelUnavailableError` so callers abort before touching disk.
    """

    def __init__(self, checkpoint: str):
        self.variant = checkpoint
        try:
            from transformers import CLIPModel, CLIPProcessor  # heavyweight, lazy

            self._model = CLIPModel.from_pretrained(checkpoint)
            self._processor = CLIPProcessor.from_pretrained(checkpoint)
        except Exception as e:  # noqa: BLE001 - loader failures vary widely
            raise ModelUnavailableError(
                f"encoder variant {checkpoint!r} could not be loaded: {e}"
            ) from e
        self.dim = int(self._model.config.projection_dim)

    def embed_text(self, prompt: str) -> np.ndarray:
        text = prompt.strip()
        if not text:
            raise ValueError("prompt must be non-empty")
        import torch

        with torch.no_grad():
            inputs = self._processor(text=[text], return_tensors="pt", padding=True)
            feats = self._model.get_text_features(**inputs)[0].numpy().astype(np.float64)
        return _unit(feats, f"prompt {text!r}")

    def embed_region(self, rgb_u8: np.ndarray, bitmap: np.ndarray) -> np.ndarray:
        import torch
        from PIL import Image

        mask = np.asarray(bitmap, dtype=bool)
        if int(mask.sum()) < 1:
            raise ValueError("region must contain at least one pixel")
        ys, xs = np.nonzero(mask)
        crop = np.asarray(rgb_u8)[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]
        with torch.no_grad():
            inputs = self._processor(images=Image.fromarray(crop), return_tensors="pt")
            feats = self._model.get_image_features(**inputs)[0].numpy().astype(np.float64)
        return _unit(feats, "region")

    def canonical_rows(self) -> dict[str, np.ndarray]:
        return {name: self.embed_text(name) for name in CANONICAL_NAMES}


_ENCODER_VARIANTS: dict[str, Callable[[int], Encoder]] = {
    "hash-proj": lambda dim: HashProjectionEncoder(dim),
    "clip-vit-base-patch32": lambda dim: PretrainedEncoder("openai/clip-vit-base-patch32"),
}


def register_encoder_variant(name: str, factory: Callable[[int], Encoder]) -> None:
    """Expose a custom encoder under ``--encoder name``."""
    _ENCODER_VARIANTS[name] = factory


def make_encoder(variant: str, dim: int) -> Encoder:
    try:
        factory = _ENCODER_VARIANTS[variant]
    except KeyError:
        known = ", ".join(sorted(_ENCODER_VARIANTS))
        raise ValueError(f"unknown encoder variant {variant!r} (choices: {known})") from None
    return factory(dim)
