"""Extractor adapter that produces gridfield dataset directories.

The bridge consumes the main package only through its external
interfaces (the dataset layout, the CLI, and the encoder endpoint
contract); it never imports gridfield.
"""

from .encoder import (
    HashProjectionEncoder,
    ModelUnavailableError,
    make_encoder,
    register_encoder_variant,
)
from .export import ExtractionConfig, ExportReport, export_dataset
from .formats import BridgeFormatError, Pose, PosedInput, load_poses
from .segmenter import GridPromptSegmenter, make_segmenter, register_segmenter_variant
from .serve import create_encoder_app

__all__ = [
    "BridgeFormatError",
    "ExtractionConfig",
    "ExportReport",
    "GridPromptSegmenter",
    "HashProjectionEncoder",
    "ModelUnavailableError",
    "Pose",
    "PosedInput",
    "create_encoder_app",
    "export_dataset",
    "load_poses",
    "make_encoder",
    "make_segmenter",
    "register_encoder_variant",
    "register_segmenter_variant",
]
