"""Command-line pipeline driver.

Subcommands cover the whole flow: ``synth`` writes a synthetic dataset
with ground truth, ``ingest`` validates a dataset directory, ``match``
computes cross-view keypoint matches, ``map`` groups masks into objects,
``train`` optimizes the per-Gaussian features, ``query`` runs a single
open-vocabulary lookup, ``eval`` scores the pipeline against ground
truth, and ``serve`` exposes the trained field over HTTP.

A trained field is a ``gaussians``-format file plus a JSON sidecar
(``<field>.json``) recording the dataset and mapping it was built from,
so downstream commands need only the field path.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import dataset_io, kernels
from .errors import GridfieldError
from .evalharness import evaluate_field, run_ablation, run_pipeline
from .ingest import builtin_match_pair
from .mapping import (
    apply_mapping,
    bake_feature_maps,
    build_lattice,
    cross_view_grid_mapping,
    load_mapping,
    save_mapping,
)
from .query import SemanticField
from .scene_data import KeypointMatchSet, MatchParams, QueryConfig, TrainConfig, validate_dataset
from .splatting import RenderConfig, train_features
from .synth import SyntheticSceneSpec, generate_synthetic_scene, load_truth, save_scene_fixtures


def _fail(msg: str) -> "SystemExit":
    print(f"error: {msg}", file=sys.stderr)
    return SystemExit(1)


def cmd_synth(args) -> int:
    spec = SyntheticSceneSpec(
        n_objects=args.objects,
        n_views=args.views,
        width=args.size,
        height=args.size,
        seed=args.seed,
        embedding_noise=args.embedding_noise,
        color_noise=args.color_noise,
        match_dropout=args.match_dropout,
        kp_per_object=args.kp_per_object,
    )
    scene = generate_synthetic_scene(spec)
    save_scene_fixtures(scene, args.out)
    n_masks = sum(len(m) for m in scene.dataset.masks)
    print(f"wrote {args.out}: {spec.n_views} views, {spec.n_objects} objects, {n_masks} masks")
    return 0


def cmd_ingest(args) -> int:
    ds, cloud = dataset_io.load_dataset(args.dataset)
    violations = validate_dataset(ds, cloud)
    n_masks = sum(len(m) for m in ds.masks)
    n_pairs = len(ds.matches.pairs) if ds.matches else 0
    print(
        f"{args.dataset}: {ds.view_count} views {ds.meta.width}x{ds.meta.height}, "
        f"{n_masks} masks, {n_pairs} match pairs, "
        f"gaussians={'yes' if cloud is not None else 'no'}"
    )
    for v in violations:
        print(f"  {v}")
    if violations:
        print(f"{len(violations)} violation(s)")
        return 1 if args.check else 0
    print("ok" if args.check else f"{n_masks} masks valid")
    return 0


def cmd_match(args) -> int:
    ds, _ = dataset_io.load_dataset(args.dataset, with_gaussians=False)
    matches = KeypointMatchSet() if (ds.matches is None or args.force) else ds.matches
    n_new = 0
    for a in range(ds.view_count):
        for b in range(a + 1, ds.view_count):
            if (a, b) in matches and not args.force:
                continue
            pairs = builtin_match_pair(ds.views[a].rgb, ds.views[b].rgb)
            if len(pairs):
                matches.put(a, b, pairs)
                n_new += 1
    dataset_io.save_matches(matches, Path(args.dataset) / "matches.bin")
    total = sum(len(v) for v in matches.pairs.values())
    print(f"matched {n_new} new view pairs, {total} correspondences total")
    return 0


def _match_params(args) -> MatchParams:
    return MatchParams(tau_kp=args.tau_kp, theta=args.theta, alpha=args.alpha, window=args.window)


def cmd_map(args) -> int:
    ds, _ = dataset_io.load_dataset(args.dataset, with_gaussians=False)
    result = cross_view_grid_mapping(ds, _match_params(args), use_keypoints=not args.no_keypoints)
    apply_mapping(ds, result)
    out = Path(args.out) if args.out else Path(args.dataset) / "mapping.json"
    save_mapping(result, out)
    counts = {}
    for p in result.provenance.values():
        counts[p] = counts.get(p, 0) + 1
    summary = ", ".join(f"{k}={v}" for k, v in sorted(counts.items()))
    print(f"mapped {len(result.idx)} masks into {result.K} objects ({summary}) -> {out}")
    return 0


def cmd_train(args) -> int:
    root = Path(args.dataset)
    ds, cloud = dataset_io.load_dataset(root)
    if cloud is None:
        raise _fail(f"{root} has no gaussians file")
    mapping_path = Path(args.mapping) if args.mapping else root / "mapping.json"
    if not mapping_path.exists():
        raise _fail(f"mapping file {mapping_path} not found (run `gridfield map` first)")
    result = load_mapping(mapping_path)
    lattice = build_lattice(result, ds)
    targets, coverages = bake_feature_maps(ds, result, lattice)
    cfg = TrainConfig(lam=args.lam, iterations=args.iterations, step_size=args.step_size, seed=args.seed)
    t0 = time.perf_counter()
    trained, history = train_features(
        cloud, [v.camera for v in ds.views], targets, coverages,
        ds.meta.width, ds.meta.height, cfg,
    )
    dt = time.perf_counter() - t0
    out = Path(args.out)
    dataset_io.save_gaussians(trained, out)
    sidecar = {
        "dataset": str(root.resolve()),
        "mapping": str(mapping_path.resolve()),
        "K": result.K,
        "iterations": cfg.iterations,
        "final_loss": history[-1] if history else None,
    }
    Path(str(out) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    last = f"{history[-1]:.5f}" if history else "n/a"
    print(f"trained {cfg.iterations} iterations in {dt:.1f}s, final loss {last} -> {out}")
    return 0


def _load_field(args) -> tuple[SemanticField, dict, Path]:
    field_path = Path(args.field)
    sidecar_path = Path(str(field_path) + ".json")
    if not sidecar_path.exists():
        raise _fail(f"field sidecar {sidecar_path} not found")
    sidecar = json.loads(sidecar_path.read_text())
    dataset_root = Path(args.dataset) if getattr(args, "dataset", None) else Path(sidecar["dataset"])
    ds, _ = dataset_io.load_dataset(dataset_root, with_gaussians=False)
    cloud = dataset_io.load_gaussians(field_path)
    mapping_path = Path(sidecar["mapping"])
    if not mapping_path.is_absolute():
        mapping_path = dataset_root / mapping_path
    result = load_mapping(mapping_path)
    lattice = build_lattice(result, ds)
    return SemanticField.from_dataset(ds, cloud, lattice), sidecar, dataset_root


def cmd_query(args) -> int:
    field, _, dataset_root = _load_field(args)
    if (args.embedding is None) == (args.name is None):
        raise _fail("give exactly one of --embedding or --name")
    if args.name is not None:
        queries_path = dataset_root / "eval" / "queries.json"
        if not queries_path.exists():
            raise _fail(f"no saved queries at {queries_path}")
        saved = {q["name"]: q for q in json.loads(queries_path.read_text())["queries"]}
        if args.name not in saved:
            raise _fail(f"unknown query name {args.name!r}")
        emb = np.asarray(saved[args.name]["embedding"], dtype=np.float64)
        view = args.view if args.view is not None else int(saved[args.name]["view"])
    else:
        emb = dataset_io.load_embedding_file(args.embedding, emb_dim_from(field))
        view = args.view if args.view is not None else 0
    cfg = QueryConfig(tau_ac=args.tau_ac, top_n=args.top_n, aggregate=args.aggregate)
    res = field.query(emb, view, cfg)
    area = int(res.mask.sum())
    best = res.object_ids[0]
    print(
        f"view {view}: object {best} (score {res.scores[best]:.4f}), "
        f"mask area {area}, best pixel {res.best_pixel}, "
        f"{res.timings_ms['total']:.1f} ms"
    )
    if args.out:
        Image.fromarray(res.mask.astype(np.uint8) * 255, mode="L").save(args.out)
        print(f"wrote {args.out}")
    return 0


def emb_dim_from(field: SemanticField) -> int:
    return field.lattice.cells[0].embeddings.shape[1]


def cmd_eval(args) -> int:
    root = Path(args.dataset)
    ds, cloud = dataset_io.load_dataset(root)
    if cloud is None:
        raise _fail(f"{root} has no gaussians file")
    id_maps, _, queries = load_truth(root)
    train_cfg = TrainConfig(iterations=args.iterations, seed=args.seed)
    if args.ablate:
        reports = run_ablation(ds, queries, id_maps)
        for name, r in reports.items():
            print(
                f"{name:>9}: mean_iou={r.mean_iou:.4f} "
                f"loc_acc={r.localization_accuracy:.2f} K={r.K}"
            )
        payload = {name: r.to_dict() for name, r in reports.items()}
    else:
        art = run_pipeline(ds, cloud, train_cfg=train_cfg)
        report = evaluate_field(art.field, queries, id_maps, K=art.mapping.K)
        print(
            f"mean_iou={report.mean_iou:.4f} "
            f"loc_acc={report.localization_accuracy:.2f} K={report.K}"
        )
        payload = report.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        print(f"wrote {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    field, sidecar, dataset_root = _load_field(args)
    app = create_app(field, dataset_root=dataset_root)
    print(f"serving field ({sidecar['K']} objects) on {args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridfield", description=__doc__.split("\n\n")[0])
    p.add_argument(
        "--kernels",
        choices=("numba", "numpy"),
        default=None,
        help="compute backend override (default: GRIDFIELD_KERNELS or numba when available)",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    sp.add_argument("--out", required=True)
    sp.add_argument("--objects", type=int, default=8)
    sp.add_argument("--views", type=int, default=5)
    sp.add_argument("--size", type=int, default=128)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--embedding-noise", type=float, default=0.0)
    sp.add_argument("--color-noise", type=float, default=0.0)
    sp.add_argument("--match-dropout", type=float, default=0.0)
    sp.add_argument("--kp-per-object", type=int, default=8)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("ingest", help="load a dataset directory and report invariant violations")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--check", action="store_true", help="exit nonzero when violations are found")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("match", help="detect and match keypoints across view pairs")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--force", action="store_true", help="recompute pairs that already exist")
    sp.set_defaults(func=cmd_match)

    sp = sub.add_parser("map", help="group masks across views into scene objects")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--out", default=None, help="mapping JSON path (default DATASET/mapping.json)")
    sp.add_argument("--tau-kp", type=int, default=4)
    sp.add_argument("--theta", type=float, default=0.95)
    sp.add_argument("--alpha", type=float, default=0.3)
    sp.add_argument("--window", type=int, default=None)
    sp.add_argument("--no-keypoints", action="store_true")
    sp.set_defaults(func=cmd_map)

    sp = sub.add_parser("train", help="optimize per-Gaussian features against baked targets")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--mapping", default=None)
    sp.add_argument("--out", required=True, help="output field file")
    sp.add_argument("--iterations", type=int, default=2000)
    sp.add_argument("--lam", type=float, default=0.2)
    sp.add_argument("--step-size", type=float, default=5e-3)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("query", help="run one open-vocabulary query against a trained field")
    sp.add_argument("--field", required=True)
    sp.add_argument("--dataset", default=None, help="override the sidecar's dataset path")
    sp.add_argument("--embedding", default=None, help="raw float32 embedding file")
    sp.add_argument("--name", default=None, help="named query from the dataset's eval set")
    sp.add_argument("--view", type=int, default=None)
    sp.add_argument("--tau-ac", type=float, default=5.0)
    sp.add_argument("--top-n", type=int, default=1)
    sp.add_argument("--aggregate", choices=("max", "mean"), default="max")
    sp.add_argument("--out", default=None, help="write the query mask as a PNG")
    sp.set_defaults(func=cmd_query)

    sp = sub.add_parser("eval", help="score the pipeline against dataset ground truth")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--iterations", type=int, default=500)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--ablate", action="store_true", help="compare matching configurations")
    sp.add_argument("--out", default=None, help="write the report JSON")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("serve", help="serve a trained field over HTTP")
    sp.add_argument("--field", required=True)
    sp.add_argument("--dataset", default=None)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.kernels:
        kernels.use_backend(args.kernels)
    try:
        return args.func(args)
    except GridfieldError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
