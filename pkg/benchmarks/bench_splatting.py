"""Benchmark the two rasterization kernel backends against each other.

Renders a seeded random Gaussian cloud with both the numba and numpy
backends, times forward and backward passes, and reports the maximum
elementwise deviation between them.

Usage:
    python3 benchmarks/bench_splatting.py
    python3 benchmarks/bench_splatting.py --gaussians 5000 --size 512 --repeats 5
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from gridfield import Camera, GaussianCloud, backward_features, render_with_transmittance
from gridfield.kernels import use_backend


def make_scene(n: int, seed: int) -> GaussianCloud:
    rng = np.random.default_rng(seed)
    quats = rng.standard_normal((n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return GaussianCloud(
        positions=np.column_stack(
            [
                rng.uniform(-1.2, 1.2, n),
                rng.uniform(-1.2, 1.2, n),
                rng.uniform(1.5, 3.5, n),
            ]
        ),
        scales=rng.uniform(0.02, 0.12, (n, 3)),
        rotations=quats,
        opacities=rng.uniform(0.3, 0.95, n),
        features=rng.uniform(0.0, 1.0, (n, 3)),
    )


def make_camera(width: int, height: int) -> Camera:
    return Camera(
        fx=0.9 * width,
        fy=0.9 * width,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        world_to_camera=np.eye(4),
    )


def time_backend(name, cloud, cam, width, height, pixel_grad, repeats):
    prev = use_backend(name)
    try:
        # one untimed pass absorbs JIT compilation for the numba backend
        render_with_transmittance(cloud, cam, width, height)
        backward_features(cloud, cam, width, height, pixel_grad)

        fwd_times, bwd_times = [], []
        for _ in range(repeats):
            t0 = time.perf_counter()
            img, trans = render_with_transmittance(cloud, cam, width, height)
            t1 = time.perf_counter()
            grad = backward_features(cloud, cam, width, height, pixel_grad)
            t2 = time.perf_counter()
            fwd_times.append(t1 - t0)
            bwd_times.append(t2 - t1)
        return img, trans, grad, min(fwd_times), min(bwd_times)
    finally:
        use_backend(prev)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gaussians", type=int, default=2000, help="number of Gaussians (default 2000)")
    ap.add_argument("--size", type=int, default=256, help="square render size in pixels (default 256)")
    ap.add_argument("--repeats", type=int, default=3, help="timed repeats per backend; best is reported (default 3)")
    ap.add_argument("--seed", type=int, default=0, help="scene seed (default 0)")
    args = ap.parse_args()

    cloud = make_scene(args.gaussians, args.seed)
    cam = make_camera(args.size, args.size)
    rng = np.random.default_rng(args.seed + 1)
    pixel_grad = rng.standard_normal((args.size, args.size, 3))

    print(f"scene: {args.gaussians} gaussians, {args.size}x{args.size} render, seed {args.seed}")
    print(f"{'backend':<8} | {'forward':>10} | {'backward':>10}")
    print("-" * 36)

    results = {}
    for name in ("numba", "numpy"):
        img, trans, grad, t_fwd, t_bwd = time_backend(
            name, cloud, cam, args.size, args.size, pixel_grad, args.repeats
        )
        results[name] = (img, trans, grad)
        print(f"{name:<8} | {t_fwd * 1e3:>8.2f}ms | {t_bwd * 1e3:>8.2f}ms")
        if name == "numba":
            speedup_base = (t_fwd, t_bwd)
        else:
            print(
                f"{'speedup':<8} | {t_fwd / speedup_base[0]:>9.1f}x | {t_bwd / speedup_base[1]:>9.1f}x"
            )

    dev_img = float(np.max(np.abs(results["numba"][0] - results["numpy"][0])))
    dev_trans = float(np.max(np.abs(results["numba"][1] - results["numpy"][1])))
    dev_grad = float(np.max(np.abs(results["numba"][2] - results["numpy"][2])))
    print()
    print(f"max deviation: image {dev_img:.3g}, transmittance {dev_trans:.3g}, gradient {dev_grad:.3g}")
    worst = max(dev_img, dev_trans, dev_grad)
    if worst > 1e-9:
        raise SystemExit(f"backends disagree beyond 1e-9 (worst {worst:.3g})")
    print("backends agree to 1e-9")


if __name__ == "__main__":
    main()
