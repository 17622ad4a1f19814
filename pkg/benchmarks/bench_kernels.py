"""Timing comparison between the numba and pure-numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--rays N] [--samples K] [--repeat R]

Times the hot kernels (render_core, trilinear_gather, channel_sums,
scatter_weighted, radiance_backward) on a random scene and prints a table
with the speedup of the compiled path over the fallback.
"""

import argparse
import time

import numpy as np

from instafield.grids import SceneBounds, VoxelGrid, ray_aabb_intersect_batch
from instafield.kernels import numpy_impl

try:
    from instafield.kernels import numba_impl
except ImportError:
    numba_impl = None


def make_inputs(n_rays, n_samples, dims=(64, 64, 64), seed=0):
    rng = np.random.default_rng(seed)
    bounds = SceneBounds(np.array([-1.0, -1.0, -1.0]),
                         np.array([1.0, 1.0, 1.0]))
    nx, ny, nz = dims
    sigma = rng.random((nz, ny, nx, 1)) * 6.0
    color = rng.random((nz, ny, nx, 3))
    grid = VoxelGrid(dims=dims, channels=1, bounds=bounds, data=sigma)

    d = rng.normal(size=(n_rays, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    origins = -d * 2.5 + rng.normal(scale=0.2, size=(n_rays, 3))
    t0, t1 = ray_aabb_intersect_batch(origins, d, bounds)
    jitter = rng.random((n_rays, n_samples))
    pts = rng.uniform(-1.2, 1.2, size=(n_rays * n_samples, 3))
    dl_dc = rng.normal(size=(n_rays, 3))
    return {"bounds": bounds, "grid": grid, "sigma": sigma, "color": color,
            "origins": origins, "dirs": d, "t0": t0, "t1": t1,
            "jitter": jitter, "pts": pts, "dl_dc": dl_dc, "rng": rng}


def bench(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def run_backend(impl, inp, repeat):
    g = inp["grid"]
    bmin, inv = g.bounds.min_corner, g.inv_voxel
    common = (inp["sigma"], bmin, inv, inp["origins"], inp["dirs"])
    t_vals, deltas, weights, _ = impl.render_core(
        *common, inp["t0"], inp["t1"], inp["jitter"])
    ray_grads = inp["rng"].normal(size=(inp["origins"].shape[0], 3))
    buf = np.zeros_like(inp["color"])
    sig_buf = np.zeros_like(inp["sigma"])
    col_buf = np.zeros_like(inp["color"])

    timings = {
        "render_core": bench(
            lambda: impl.render_core(*common, inp["t0"], inp["t1"],
                                     inp["jitter"]), repeat),
        "trilinear_gather": bench(
            lambda: impl.trilinear_gather(inp["color"], bmin, inv,
                                          inp["pts"]), repeat),
        "channel_sums": bench(
            lambda: impl.channel_sums(inp["color"], bmin, inv,
                                      inp["origins"], inp["dirs"],
                                      t_vals, weights), repeat),
        "scatter_weighted": bench(
            lambda: impl.scatter_weighted(buf, bmin, inv, inp["origins"],
                                          inp["dirs"], t_vals, weights,
                                          ray_grads), repeat),
        "radiance_backward": bench(
            lambda: impl.radiance_backward(inp["sigma"], inp["color"], bmin,
                                           inv, inp["origins"], inp["dirs"],
                                           t_vals, deltas, weights,
                                           inp["dl_dc"], sig_buf, col_buf),
            repeat),
    }
    return timings


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rays", type=int, default=4096)
    ap.add_argument("--samples", type=int, default=64)
    ap.add_argument("--grid", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    inp = make_inputs(args.rays, args.samples,
                      dims=(args.grid,) * 3)
    print(f"{args.rays} rays x {args.samples} samples, "
          f"{args.grid}^3 grid, best of {args.repeat}")

    np_times = run_backend(numpy_impl, inp, args.repeat)
    if numba_impl is None:
        print("numba unavailable; fallback only")
        for k, v in np_times.items():
            print(f"  {k:<20s} numpy {v * 1e3:8.2f} ms")
        return
    run_backend(numba_impl, inp, 1)  # warm the JIT cache
    nb_times = run_backend(numba_impl, inp, args.repeat)

    print(f"  {'kernel':<20s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for k in np_times:
        a, b = np_times[k], nb_times[k]
        print(f"  {k:<20s} {a * 1e3:8.2f}ms {b * 1e3:8.2f}ms "
              f"{a / b:7.1f}x")


if __name__ == "__main__":
    main()
