"""Generate viewer test fixtures from a real service instance.

Builds a synthetic dataset, trains a field through the CLI, then captures
verbatim HTTP bodies (scene, query listing, query responses, a tau sweep)
plus the CLI-exported mask PNGs the equivalence tests compare against.
Everything the TypeScript tests consume comes from this script, so the
viewer is only ever tested against genuine service output.

Usage:
    python3 frontend/scripts/make_fixtures.py --out frontend/tests/fixtures
"""

from __future__ import annotations

import argparse
import json
import shutil
import tempfile
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from gridfield import (
    SemanticField,
    build_lattice,
    create_app,
    load_mapping,
)
from gridfield import dataset_io
from gridfield.cli import main as cli_main

TAU_SWEEP = [1.0, 2.0, 5.0, 8.0, 16.0, 40.0, 100.0, 127.0]


def run_cli(argv: list[str]) -> None:
    rc = cli_main(argv)
    if rc != 0:
        raise SystemExit(f"cli {argv[0]} failed with rc {rc}")


def build_field(work: Path) -> tuple[Path, Path]:
    ds = work / "dataset"
    field = work / "field.bin"
    run_cli(["synth", "--out", str(ds), "--objects", "8", "--views", "5",
             "--size", "64", "--seed", "7"])
    run_cli(["map", "--dataset", str(ds)])
    run_cli(["train", "--dataset", str(ds), "--out", str(field),
             "--iterations", "300", "--seed", "0"])
    return ds, field


def load_service(ds: Path, field_path: Path) -> TestClient:
    dataset, _ = dataset_io.load_dataset(ds, with_gaussians=False)
    cloud = dataset_io.load_gaussians(field_path)
    mapping = load_mapping(ds / "mapping.json")
    lattice = build_lattice(mapping, dataset)
    field = SemanticField.from_dataset(dataset, cloud, lattice)
    return TestClient(create_app(field, dataset_root=ds))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="fixture output directory")
    args = ap.parse_args()
    out = Path(args.out)
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)

    with tempfile.TemporaryDirectory() as tmp:
        work = Path(tmp)
        ds, field_path = build_field(work)
        client = load_service(ds, field_path)

        for path, name in (("/health", "health.json"), ("/scene", "scene.json"), ("/queries", "queries.json")):
            resp = client.get(path)
            resp.raise_for_status()
            (out / name).write_text(resp.text)

        saved = json.loads((ds / "eval" / "queries.json").read_text())["queries"]
        by_name = {q["name"]: q for q in saved}

        # ten scripted queries: the eight object prototypes at their best
        # views, one off-view multi-target case, one raw-embedding case
        cases: list[dict] = []
        scripted: list[dict] = []
        for k in range(8):
            q = by_name[f"object_{k}"]
            scripted.append({"name": q["name"], "view": int(q["view"]), "tau_ac": 5.0, "top_n": 1})
        scripted.append({"name": "object_2", "view": (int(by_name["object_2"]["view"]) + 2) % 5,
                         "tau_ac": 5.0, "top_n": 2})
        emb_f32 = np.asarray(by_name["object_5"]["embedding"], dtype=np.float32)
        emb_file = work / "q5.bin"
        dataset_io.save_embedding_file(emb_file, emb_f32)
        emb_f64 = dataset_io.load_embedding_file(emb_file, emb_f32.size)
        scripted.append({"embedding": [float(v) for v in emb_f64],
                         "view": int(by_name["object_5"]["view"]), "tau_ac": 8.0, "top_n": 1})

        for i, req in enumerate(scripted):
            body = dict(req, aggregate="max")
            resp = client.post("/query", json=body)
            resp.raise_for_status()
            body_file = f"query_{i:02}.json"
            png_file = f"query_{i:02}.png"
            (out / body_file).write_text(resp.text)

            argv = ["query", "--field", str(field_path), "--view", str(req["view"]),
                    "--tau-ac", repr(req["tau_ac"]), "--top-n", str(req["top_n"]),
                    "--out", str(out / png_file)]
            if "name" in req:
                argv += ["--name", req["name"]]
            else:
                argv += ["--embedding", str(emb_file)]
            run_cli(argv)
            cases.append({"id": i, "request": req, "body": body_file, "png": png_file})

        # tau sweep for the slider-monotonicity test
        sweep_req = {"name": "object_0", "view": int(by_name["object_0"]["view"]), "top_n": 1}
        steps = []
        last_area = -1
        for tau in TAU_SWEEP:
            resp = client.post("/query", json=dict(sweep_req, tau_ac=tau, aggregate="max"))
            resp.raise_for_status()
            area = resp.json()["area"]
            if area < last_area:
                raise SystemExit(f"tau sweep area decreased at tau={tau}")
            last_area = area
            step_file = f"tau_{tau:g}.json"
            (out / step_file).write_text(resp.text)
            steps.append({"tau_ac": tau, "body": step_file, "area": area})
        if steps[-1]["area"] <= steps[0]["area"]:
            raise SystemExit("tau sweep never grew; fixture scene unusable for the slider test")

        scene = json.loads((out / "scene.json").read_text())
        (out / "index.json").write_text(json.dumps({
            "width": scene["width"],
            "height": scene["height"],
            "views": scene["views"],
            "K": scene["K"],
            "cases": cases,
            "tau_sweep": {"request": sweep_req, "steps": steps},
        }, indent=2))
    print(f"wrote {len(cases)} query fixtures + {len(TAU_SWEEP)} sweep steps to {out}")


if __name__ == "__main__":
    main()
