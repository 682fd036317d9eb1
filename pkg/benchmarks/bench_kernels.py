"""Benchmark the compiled kernels against the numpy reference backend.

Times the three hot kernels (point queries, forward compositing, and the
backward pass) on the default training workload shape, checks that both
backends agree on the outputs, and prints per-call timings with the
speedup.  Run from the repository root:

    python3 benchmarks/bench_kernels.py [--rays 1024] [--samples 64]
                                        [--resolution 32] [--repeats 20]
"""

import argparse
import time

import numpy as np

from radiant_ens._kernels import load_backend
from radiant_ens.field import init_field
from radiant_ens.geometry import Aabb


def make_workload(resolution, n_rays, n_samples, seed=0):
    rng = np.random.default_rng(seed)
    bounds = Aabb(lo=(-1.0, -1.0, -1.0), hi=(1.0, 1.0, 1.0))
    field = init_field(resolution, bounds, seed=seed)
    field.raw_density += rng.normal(scale=0.5, size=field.raw_density.shape)
    field.raw_rgb += rng.normal(scale=0.5, size=field.raw_rgb.shape)
    origins = rng.uniform(-2.5, 2.5, size=(n_rays, 3))
    dirs = rng.normal(size=(n_rays, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    edges = np.linspace(0.5, 4.5, n_samples + 1)
    ts = np.broadcast_to(0.5 * (edges[:-1] + edges[1:]), (n_rays, n_samples)).copy()
    deltas = np.full((n_rays, n_samples), edges[1] - edges[0])
    d_color = rng.normal(size=(n_rays, 3))
    d_q = rng.normal(size=n_rays)
    return field, origins, dirs, ts, deltas, d_color, d_q


def time_call(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_backend(backend, work, repeats):
    field, origins, dirs, ts, deltas, d_color, d_q = work
    n_rays, n_samples = ts.shape
    args = (field.raw_density, field.raw_rgb, field.bounds.lo, field.bounds.hi)
    points = (origins[:, None, :] + ts[..., None] * dirs[:, None, :]).reshape(-1, 3)

    rho = np.empty(n_rays * n_samples)
    rgb = np.empty((n_rays * n_samples, 3))
    color = np.empty((n_rays, 3))
    q = np.empty(n_rays)
    grad_density = np.zeros_like(field.raw_density)
    grad_rgb = np.zeros_like(field.raw_rgb)

    results = {}
    results["query_points"] = time_call(
        lambda: backend.query_points(*args, points, rho, rgb), repeats
    )
    results["render_forward"] = time_call(
        lambda: backend.render_rays_forward(
            *args, origins, dirs, ts, deltas, color, q
        ),
        repeats,
    )

    def backward():
        grad_density[:] = 0.0
        grad_rgb[:] = 0.0
        backend.render_rays_backward(
            *args, origins, dirs, ts, deltas, d_color, d_q,
            grad_density, grad_rgb,
        )

    results["render_backward"] = time_call(backward, repeats)
    outputs = (rho.copy(), rgb.copy(), color.copy(), q.copy(),
               grad_density.copy(), grad_rgb.copy())
    return results, outputs


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rays", type=int, default=1024)
    parser.add_argument("--samples", type=int, default=64)
    parser.add_argument("--resolution", type=int, default=32)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    work = make_workload(args.resolution, args.rays, args.samples)
    print(
        f"workload: {args.rays} rays x {args.samples} samples, "
        f"resolution {args.resolution}, best of {args.repeats}"
    )

    timings = {}
    outputs = {}
    for name in ("python", "cython"):
        try:
            backend = load_backend(name)
        except ImportError:
            print(f"{name:>8}: not built, skipping")
            continue
        timings[name], outputs[name] = bench_backend(backend, work, args.repeats)

    if len(outputs) == 2:
        worst = max(
            float(np.abs(a - b).max())
            for a, b in zip(outputs["python"], outputs["cython"])
        )
        print(f"backend agreement: max abs difference {worst:.3e}")

    kernels = ("query_points", "render_forward", "render_backward")
    header = f"{'kernel':>16}" + "".join(f"{n:>12}" for n in timings) + f"{'speedup':>10}"
    print(header)
    for kernel in kernels:
        row = f"{kernel:>16}"
        for name in timings:
            row += f"{timings[name][kernel] * 1e3:>10.2f}ms"
        if len(timings) == 2:
            ratio = timings["python"][kernel] / timings["cython"][kernel]
            row += f"{ratio:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
