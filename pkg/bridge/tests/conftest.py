"""Shared fixtures: a small synthetic scene converted to bridge inputs.

The scene comes from the main package's CLI run as a subprocess; the
bridge and its tests never import gridfield.
"""

import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from gridfield_bridge import ExtractionConfig, export_dataset

VIEWS = 3
SIZE = 64
DIM = 16
GRID = 8


def run_gridfield(*args: str) -> subprocess.CompletedProcess:
    return subprocess.run(
        [sys.executable, "-m", "gridfield.cli", *args],
        capture_output=True,
        text=True,
    )


@pytest.fixture(scope="session")
def scene_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("scene") / "ds"
    proc = run_gridfield(
        "synth", "--out", str(out), "--objects", "4", "--views", str(VIEWS),
        "--size", str(SIZE), "--seed", "11",
    )
    assert proc.returncode == 0, proc.stderr
    return out


@pytest.fixture(scope="session")
def bridge_input(scene_dir: Path, tmp_path_factory) -> Path:
    """images/ directory plus poses.json in the bridge's input format."""
    root = tmp_path_factory.mktemp("input")
    images = root / "images"
    images.mkdir()
    entries = []
    for t in range(VIEWS):
        name = f"cam_{t}.png"
        shutil.copyfile(scene_dir / "views" / f"{t:04}.png", images / name)
        pose = json.loads((scene_dir / "views" / f"{t:04}.pose.json").read_text())
        pose["file"] = name
        entries.append(pose)
    (root / "poses.json").write_text(json.dumps({"images": entries}))
    return root


def make_config(bridge_input: Path, out: Path, **overrides) -> ExtractionConfig:
    defaults = dict(
        images_dir=bridge_input / "images",
        poses_path=bridge_input / "poses.json",
        out_dir=out,
        grid=GRID,
        dim=DIM,
    )
    defaults.update(overrides)
    return ExtractionConfig(**defaults)


@pytest.fixture(scope="session")
def exported(scene_dir: Path, bridge_input: Path, tmp_path_factory):
    out = tmp_path_factory.mktemp("export") / "ds"
    report = export_dataset(
        make_config(bridge_input, out, gaussians=scene_dir / "gaussians.bin")
    )
    return report
