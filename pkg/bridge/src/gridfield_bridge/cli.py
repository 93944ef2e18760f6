"""Console entry points: the extractor and the text-embedding endpoint."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .encoder import ModelUnavailableError, make_encoder
from .export import ExtractionConfig, export_dataset
from .formats import BridgeFormatError


def build_extract_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gridfield-extract",
        description="Segment and embed posed images into a gridfield dataset directory.",
    )
    p.add_argument("--images", type=Path, required=True, help="directory holding the input images")
    p.add_argument("--poses", type=Path, required=True, help="JSON manifest with per-image camera poses")
    p.add_argument("--out", type=Path, required=True, help="dataset directory to create (must not exist)")
    p.add_argument("--segmenter", default="grid-felz", help="region proposal backend (default grid-felz)")
    p.add_argument("--encoder", default="hash-proj", help="embedding backend (default hash-proj)")
    p.add_argument("--grid", type=int, default=32, help="virtual prompt-grid size (default 32)")
    p.add_argument("--dim", type=int, default=32, help="embedding dimension for weight-free encoders (default 32)")
    p.add_argument("--min-area-frac", type=float, default=0.0005, help="drop regions below this image-area fraction")
    p.add_argument("--gaussians", type=Path, default=None, help="optional gaussians.bin to copy into the dataset")
    p.add_argument("--source", default="", help="source tag for meta.json (default derived from backends)")
    return p


def main_extract(argv=None) -> int:
    args = build_extract_parser().parse_args(argv)
    try:
        cfg = ExtractionConfig(
            images_dir=args.images,
            poses_path=args.poses,
            out_dir=args.out,
            segmenter=args.segmenter,
            encoder=args.encoder,
            grid=args.grid,
            dim=args.dim,
            min_area_frac=args.min_area_frac,
            source=args.source,
            gaussians=args.gaussians,
        )
        report = export_dataset(cfg)
    except (BridgeFormatError, ModelUnavailableError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(
        f"{report.out_dir}: {report.views} views, {report.total_masks} masks, "
        f"embedding dim {report.dim}"
    )
    return 0


def build_encoder_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gridfield-encoder",
        description="Serve POST /embed for text queries against the chosen encoder backend.",
    )
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8094)
    p.add_argument("--encoder", default="hash-proj", help="embedding backend (default hash-proj)")
    p.add_argument("--dim", type=int, default=32, help="embedding dimension for weight-free encoders (default 32)")
    return p


def main_encoder(argv=None) -> int:
    args = build_encoder_parser().parse_args(argv)
    try:
        encoder = make_encoder(args.encoder, args.dim)
    except (ModelUnavailableError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    import uvicorn

    from .serve import create_encoder_app

    uvicorn.run(create_encoder_app(encoder), host=args.host, port=args.port, log_level="warning")
    return 0


if __name__ == "__main__":
    sys.exit(main_extract())
