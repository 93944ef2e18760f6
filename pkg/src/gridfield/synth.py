"""Deterministic synthetic scenes with exact ground truth.

A scene is a ring of blob-shaped objects (clusters of 3D Gaussians, one
flat color each) observed by orbiting cameras.  Everything downstream of
the pipeline is derivable exactly: per-view object id maps come from the
same compositing kernels used for rendering, masks and color histograms
come from the id maps and images, mask embeddings are noisy copies of a
per-object prototype, and keypoint matches are projections of points
sampled on the objects.  One seed fixes every byte of the output.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .dataset_io import quantize_rgb, save_dataset
from .errors import GenerationError
from .ingest import compute_color_histogram
from .scene_data import (
    CANONICAL_NAMES,
    Camera,
    Dataset,
    DatasetMeta,
    GaussianCloud,
    KeypointMatchSet,
    MaskRecord,
    PosedImage,
)
from .splatting import RenderConfig, quat_to_rotation, render_with_transmittance

BACKGROUND_RGB = (0.12, 0.12, 0.14)
# A pixel belongs to an object only when splats cover it almost fully, so
# ground-truth masks exclude the soft sub-pixel silhouette fringe.
COVERAGE_THRESHOLD = 0.985


@dataclass
class SyntheticSceneSpec:
    n_objects: int = 8
    n_views: int = 5
    width: int = 128
    height: int = 128
    seed: int = 0
    n_gaussians_per_object: int = 96  # surface shell density
    embedding_dim: int = 32
    embedding_noise: float = 0.0  # sigma of additive noise before re-normalizing
    color_noise: float = 0.0  # uniform per-pixel jitter before quantization
    kp_per_object: int = 8  # ground-truth keypoints sampled per object
    match_dropout: float = 0.0  # probability of dropping each keypoint pair
    mask_min_area: int = 16  # smaller projections count as invisible
    ring_radius: float = 1.3
    camera_radius: float = 4.0
    camera_height: float = 3.2
    focal_factor: float = 1.35  # focal length as a multiple of image width


@dataclass
class SyntheticScene:
    dataset: Dataset
    cloud: GaussianCloud
    labels: np.ndarray  # (N,) object id per Gaussian
    id_maps: list[np.ndarray]  # (H, W) int64 per view, -1 = background
    mask_objects: dict[tuple[int, int], int]  # (view, local) -> object id
    protos: np.ndarray  # (K, D) unit prototype embeddings
    palette: np.ndarray  # (K, 3) object colors
    spec: SyntheticSceneSpec


def look_at_camera(position, target, fx, fy, cx, cy, up=(0.0, 0.0, 1.0)) -> Camera:
    """World-to-camera transform for a camera at ``position`` facing ``target``."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward /= np.linalg.norm(forward)
    right = np.cross(np.asarray(up, dtype=np.float64), forward)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    w2c = np.eye(4)
    w2c[:3, :3] = R
    w2c[:3, 3] = -R @ position
    return Camera(fx=fx, fy=fy, cx=cx, cy=cy, world_to_camera=w2c)


def project_points(points: np.ndarray, cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates (n, 2) and a validity mask (points in front of the camera)."""
    t = points @ cam.rotation.T + cam.translation
    ok = t[:, 2] > cam.near
    with np.errstate(divide="ignore", invalid="ignore"):
        x = cam.fx * t[:, 0] / t[:, 2] + cam.cx
        y = cam.fy * t[:, 1] / t[:, 2] + cam.cy
    return np.stack([x, y], axis=1), ok


def _object_palette(k: int) -> np.ndarray:
    cols = [colorsys.hsv_to_rgb(i / k, 0.75, 0.9) for i in range(k)]
    return np.array(cols, dtype=np.float64)


def _fibonacci_sphere(n: int) -> np.ndarray:
    """n roughly equidistant unit vectors (deterministic spiral layout)."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _quat_from_z_to(normals: np.ndarray) -> np.ndarray:
    """Unit quaternions rotating +z onto each (unit) normal."""
    z = np.array([0.0, 0.0, 1.0])
    w = 1.0 + normals @ z
    quats = np.empty((len(normals), 4))
    quats[:, 0] = w
    quats[:, 1] = -normals[:, 1]  # cross(z, n) with z = +z axis
    quats[:, 2] = normals[:, 0]
    quats[:, 3] = 0.0
    flipped = w < 1e-9  # normal antiparallel to z: rotate pi about x
    quats[flipped] = (0.0, 1.0, 0.0, 0.0)
    return quats / np.linalg.norm(quats, axis=1, keepdims=True)


def _build_cloud(spec: SyntheticSceneSpec, rng: np.random.Generator):
    """Objects are opaque ellipsoid shells of tangent-oriented splats.

    Tangent extents tile the surface (silhouettes stay sharp because the
    normal extent is tiny), which keeps interior compositing weight near
    one; trained features then reproduce cell centers within the strict
    activation threshold.
    """
    K, per = spec.n_objects, spec.n_gaussians_per_object
    angles = 2.0 * np.pi * np.arange(K) / K
    centers = np.stack(
        [
            spec.ring_radius * np.cos(angles),
            spec.ring_radius * np.sin(angles),
            0.4 * np.where(np.arange(K) % 2 == 0, 1.0, -1.0),
        ],
        axis=1,
    )
    base_dirs = _fibonacci_sphere(per)
    positions = np.empty((K * per, 3))
    scales = np.empty((K * per, 3))
    quats = np.empty((K * per, 4))
    labels = np.repeat(np.arange(K), per)
    for k in range(K):
        radius = rng.uniform(0.38, 0.48)
        axes = radius * rng.uniform(0.88, 1.12, size=3)
        # rotate the shared point layout so shells are not aligned
        rq = rng.standard_normal(4)
        rq /= np.linalg.norm(rq)
        dirs = base_dirs @ quat_to_rotation(rq).T
        pts = dirs * axes
        normals = dirs / axes
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        spacing = radius * np.sqrt(4.0 * np.pi / per)
        sl = slice(k * per, (k + 1) * per)
        positions[sl] = centers[k] + pts
        scales[sl, 0] = scales[sl, 1] = 0.55 * spacing
        scales[sl, 2] = 0.015
        quats[sl] = _quat_from_z_to(normals)
    opacities = rng.uniform(0.95, 0.99, size=K * per)
    features = np.full((K * per, 3), 0.5)
    cloud = GaussianCloud(
        positions=positions,
        scales=scales,
        rotations=quats,
        opacities=opacities,
        features=features,
    )
    return cloud, labels


def _object_weight_maps(cloud, labels, cam, width, height, n_objects, render_cfg):
    """Per-object accumulated compositing weight, sharing one occlusion order."""
    weights = np.empty((n_objects, height, width), dtype=np.float64)
    probe = cloud.copy()
    for k in range(n_objects):
        feats = np.zeros((len(cloud), 3), dtype=np.float64)
        feats[labels == k] = 1.0
        probe.features = feats
        out, _ = render_with_transmittance(probe, cam, width, height, render_cfg)
        weights[k] = out[:, :, 0]
    return weights


def generate_synthetic_scene(spec: SyntheticSceneSpec | None = None) -> SyntheticScene:
    """Build one scene; raises :class:`GenerationError` if any object is never visible."""
    spec = spec or SyntheticSceneSpec()
    if spec.n_objects < 1 or spec.n_views < 1:
        raise GenerationError("need at least one object and one view")
    rng = np.random.default_rng(spec.seed)
    render_cfg = RenderConfig()

    cloud, labels = _build_cloud(spec, rng)
    protos = rng.standard_normal((spec.n_objects, spec.embedding_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    canonical_vecs = rng.standard_normal((len(CANONICAL_NAMES), spec.embedding_dim))
    canonical_vecs /= np.linalg.norm(canonical_vecs, axis=1, keepdims=True)
    palette = _object_palette(spec.n_objects)

    fx = fy = spec.focal_factor * spec.width
    cx, cy = (spec.width - 1) / 2.0, (spec.height - 1) / 2.0
    cameras = []
    for t in range(spec.n_views):
        phi = 2.0 * np.pi * t / spec.n_views + 0.37
        pos = (
            spec.camera_radius * np.cos(phi),
            spec.camera_radius * np.sin(phi),
            spec.camera_height,
        )
        cameras.append(look_at_camera(pos, (0.0, 0.0, 0.0), fx, fy, cx, cy))

    views: list[PosedImage] = []
    masks: list[list[MaskRecord]] = []
    id_maps: list[np.ndarray] = []
    mask_objects: dict[tuple[int, int], int] = {}
    seen = np.zeros(spec.n_objects, dtype=bool)

    for t, cam in enumerate(cameras):
        weights = _object_weight_maps(
            cloud, labels, cam, spec.width, spec.height, spec.n_objects, render_cfg
        )
        total = weights.sum(axis=0)
        covered = total > COVERAGE_THRESHOLD
        id_map = np.where(covered, weights.argmax(axis=0), -1).astype(np.int64)
        id_maps.append(id_map)

        rgb = np.empty((spec.height, spec.width, 3), dtype=np.float64)
        rgb[:] = BACKGROUND_RGB
        for k in range(spec.n_objects):
            rgb[id_map == k] = palette[k]
        if spec.color_noise > 0.0:
            rgb = rgb + rng.uniform(-spec.color_noise, spec.color_noise, rgb.shape)
        rgb = quantize_rgb(np.clip(rgb, 0.0, 1.0))
        views.append(PosedImage(rgb=rgb.astype(np.float32), camera=cam))

        view_masks: list[MaskRecord] = []
        local = 0
        for k in range(spec.n_objects):
            bitmap = id_map == k
            area = int(bitmap.sum())
            if area < spec.mask_min_area:
                continue
            emb = protos[k] + spec.embedding_noise * rng.standard_normal(spec.embedding_dim)
            emb = (emb / np.linalg.norm(emb)).astype(np.float32)
            hist = compute_color_histogram(rgb, bitmap)
            view_masks.append(
                MaskRecord(
                    view=t, local=local, bitmap=bitmap, area=area,
                    embedding=emb, histogram=hist,
                )
            )
            mask_objects[(t, local)] = k
            seen[k] = True
            local += 1
        masks.append(view_masks)

    if not np.all(seen):
        missing = np.nonzero(~seen)[0].tolist()
        raise GenerationError(f"objects occluded in every view: {missing}")

    matches = KeypointMatchSet()
    kp_world = [
        cloud.positions[labels == k][
            rng.integers(0, spec.n_gaussians_per_object, size=spec.kp_per_object)
        ]
        + 0.03 * rng.standard_normal((spec.kp_per_object, 3))
        for k in range(spec.n_objects)
    ]
    for a in range(spec.n_views):
        for b in range(a + 1, spec.n_views):
            rows = []
            for k in range(spec.n_objects):
                pa, oka = project_points(kp_world[k], cameras[a])
                pb, okb = project_points(kp_world[k], cameras[b])
                for i in range(spec.kp_per_object):
                    if not (oka[i] and okb[i]):
                        continue
                    xa, ya = int(round(pa[i, 0])), int(round(pa[i, 1]))
                    xb, yb = int(round(pb[i, 0])), int(round(pb[i, 1]))
                    if not (0 <= xa < spec.width and 0 <= ya < spec.height):
                        continue
                    if not (0 <= xb < spec.width and 0 <= yb < spec.height):
                        continue
                    if id_maps[a][ya, xa] != k or id_maps[b][yb, xb] != k:
                        continue
                    if spec.match_dropout > 0.0 and rng.random() < spec.match_dropout:
                        continue
                    rows.append([pa[i, 0], pa[i, 1], pb[i, 0], pb[i, 1]])
            if rows:
                matches.put(a, b, np.array(rows, dtype=np.float64))

    meta = DatasetMeta(
        embedding_dim=spec.embedding_dim,
        width=spec.width,
        height=spec.height,
        view_count=spec.n_views,
        source="synth",
    )
    canonical = {
        name: canonical_vecs[i].astype(np.float32) for i, name in enumerate(CANONICAL_NAMES)
    }
    dataset = Dataset(views=views, masks=masks, meta=meta, matches=matches, canonical=canonical)
    return SyntheticScene(
        dataset=dataset,
        cloud=cloud,
        labels=labels,
        id_maps=id_maps,
        mask_objects=mask_objects,
        protos=protos,
        palette=palette,
        spec=spec,
    )


def truth_box(id_map: np.ndarray, label: int) -> tuple[int, int, int, int] | None:
    """Inclusive (x0, y0, x1, y1) bounding box of a label, or None if absent."""
    ys, xs = np.nonzero(id_map == label)
    if xs.size == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


def preferred_query_view(id_maps: list[np.ndarray], label: int) -> int:
    """The view showing an object largest and least entangled with neighbors.

    Pixels near another object's silhouette blend features from both
    surfaces, so views with contact between masks score worse than clean
    ones of the same area.
    """
    best, best_score = 0, -np.inf
    for t, id_map in enumerate(id_maps):
        truth = id_map == label
        area = int(truth.sum())
        if area == 0:
            continue
        other = (id_map >= 0) & ~truth
        contact = int((ndimage.binary_dilation(other, iterations=2) & truth).sum())
        score = area - 8 * contact
        if score > best_score:
            best, best_score = t, score
    return best


def save_scene_fixtures(scene: SyntheticScene, root: str | Path) -> None:
    """Write the dataset plus ground truth and an evaluation query list.

    Layout under ``root``: the standard dataset files, ``truth/`` with
    per-view id-map PNGs (pixel value = object id + 1, 0 = background)
    and ``labels.json`` (per-Gaussian and per-mask object ids), and
    ``eval/queries.json`` with one named query per object targeting the
    view where it is largest.
    """
    root = Path(root)
    save_dataset(scene.dataset, root, cloud=scene.cloud)

    truth_dir = root / "truth"
    truth_dir.mkdir(parents=True, exist_ok=True)
    for t, id_map in enumerate(scene.id_maps):
        img = (id_map + 1).astype(np.uint8)
        Image.fromarray(img, mode="L").save(truth_dir / f"idmap_{t:04d}.png")
    labels_payload = {
        "gaussians": scene.labels.tolist(),
        "masks": [
            {"view": v, "local": l, "label": scene.mask_objects[(v, l)]}
            for v, l in sorted(scene.mask_objects)
        ],
    }
    (truth_dir / "labels.json").write_text(
        json.dumps(labels_payload, sort_keys=True, separators=(",", ":")) + "\n"
    )

    eval_dir = root / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    queries = []
    for k in range(scene.spec.n_objects):
        view = preferred_query_view(scene.id_maps, k)
        emb = scene.protos[k].astype(np.float32)
        queries.append(
            {
                "name": f"object_{k}",
                "view": view,
                "label": k,
                "embedding": [float(x) for x in emb],
            }
        )
    (eval_dir / "queries.json").write_text(
        json.dumps({"queries": queries}, sort_keys=True, separators=(",", ":")) + "\n"
    )


def load_truth(root: str | Path) -> tuple[list[np.ndarray], dict, list[dict]]:
    """Read back what :func:`save_scene_fixtures` wrote.

    Returns (id_maps, labels payload, query list).
    """
    root = Path(root)
    id_maps = []
    t = 0
    while (root / "truth" / f"idmap_{t:04d}.png").exists():
        img = np.asarray(Image.open(root / "truth" / f"idmap_{t:04d}.png"), dtype=np.int64)
        id_maps.append(img - 1)
        t += 1
    labels = json.loads((root / "truth" / "labels.json").read_text())
    queries = json.loads((root / "eval" / "queries.json").read_text())["queries"]
    return id_maps, labels, queries
