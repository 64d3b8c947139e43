"""Time the numba kernels against their numpy fallbacks on synthetic inputs.

Run: python3 benchmarks/bench_kernels.py [--repeat N] [--scale S]
Both variants are called directly, so the CANOPY_HEIGHT_NUMBA flag does not matter here.
The first numba call (compilation or cache load) is excluded from timing.
"""

import argparse
import time

import numpy as np

from canopy_height import kernels
from canopy_height.raster import GridSpec
from canopy_height.tin import delaunay


def best_of(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(scale: float, rng):
    n = int(200_000 * scale)
    ijk = np.floor(rng.random((n, 3)) * [200, 200, 40]).astype(np.int64)
    yield "voxel_other_counts", (ijk,), lambda f, a: f(*a)

    m = int(20_000 * scale)
    pts = np.column_stack([rng.random(m) * 200, rng.random(m) * 200, rng.random(m) * 30])
    tin = delaunay(pts)
    v = tin.vertices
    grid = GridSpec(0.0, 200.0, 0.5, 400, 400)
    keep = np.ones(len(tin.triangles), dtype=np.bool_)
    args = (v[:, 0], v[:, 1], v[:, 2], tin.triangles, keep, grid.origin_x, grid.origin_y, grid.pixel_size,
            grid.width, grid.height)
    yield "rasterize_triangles", args, lambda f, a: f(*a)

    rings = []
    for _ in range(int(200 * scale)):
        cx, cy = rng.random(2) * 200
        w, h = rng.uniform(5, 20, 2)
        rings.append([(cx, cy), (cx + w, cy), (cx + w, cy + h), (cx, cy + h)])
    xs = np.concatenate([np.array(r)[:, 0] for r in rings])
    ys = np.concatenate([np.array(r)[:, 1] for r in rings])
    starts = np.arange(0, 4 * len(rings) + 1, 4, dtype=np.int64)
    args = (xs, ys, starts, 0.0, 200.0, 0.5, 400, 400, 2.0)
    yield "footprint_mask", args, lambda f, a: f(*a)

    side = int(1000 * np.sqrt(scale)) // 50 * 50
    data = rng.random((side, side)).astype(np.float32) * 40
    valid = rng.random((side, side)) > 0.05
    for stat in ("median", "mean"):
        yield f"block_stat[{stat}]", (data, 50, valid, stat, -9999.0), lambda f, a: f(*a)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numba s':>10}{'numpy s':>10}{'speedup':>10}  match")
    for name, a, call in cases(args.scale, rng):
        base = name.split("[")[0]
        nb = getattr(kernels, f"{base}_numba")
        npf = getattr(kernels, f"{base}_numpy")
        t_nb = best_of(lambda: call(nb, a), args.repeat)
        t_np = best_of(lambda: call(npf, a), args.repeat)
        r_nb, r_np = call(nb, a), call(npf, a)
        if isinstance(r_nb, tuple):
            same = all(np.array_equal(x, y) for x, y in zip(r_nb, r_np))
        else:
            same = np.allclose(r_nb, r_np, rtol=1e-6, atol=1e-6)
        print(f"{name:<24}{t_nb:>10.4f}{t_np:>10.4f}{t_np / t_nb:>10.1f}  {same}")


if __name__ == "__main__":
    main()
