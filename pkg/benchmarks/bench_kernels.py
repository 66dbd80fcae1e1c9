"""Time each kernel under the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json]

Numba timings exclude compilation (each kernel is called once first).
"""
from __future__ import annotations

import argparse
import json
import statistics
import time

import numpy as np

from ctbkit import _accel, kernels
from ctbkit.geometry import Polygon, polygon_iou


def _cases(rng):
    t = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    ring = np.stack([50 + 40 * np.cos(t) * (1 + 0.2 * np.sin(5 * t)), 50 + 30 * np.sin(t)], axis=1)
    other = Polygon((ring + [12.0, 7.0]).tolist())
    poly = Polygon(ring.tolist())
    fm = rng.normal(size=(64, 100, 160))
    pts = np.concatenate([rng.normal(c, 15, size=(150, 2)) for c in (0, 200, 400)])
    n = 20_000
    src = rng.integers(0, n, size=n)
    dst = rng.integers(0, n, size=n)
    return {
        "polygon_iou (40-gon pair, 1024 cells)": lambda: polygon_iou(poly, other),
        "raster_polygon (40-gon, 512x512)": lambda: kernels.raster_polygon(ring * 5, 512, 512),
        "roi_align (64ch, 7x7, 50 boxes)": lambda: [
            kernels.roi_align_kernel(fm, (3.0 + k, 2.0 + k / 2, 30.0 + k, 20.0 + k / 2), 7, 2) for k in range(50)
        ],
        "mean_shift (450 points)": lambda: kernels.mean_shift_kernel(pts, 40.0, 1e-3, 100),
        "connected_components (20k vertices)": lambda: kernels.connected_components(n, src, dst),
    }


def _time(fn, repeat):
    fn()
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="print machine-readable results")
    args = ap.parse_args(argv)

    backends = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    cases = _cases(np.random.default_rng(0))
    results = {}
    for name, fn in cases.items():
        row = {}
        for be in backends:
            with _accel.backend(be):
                row[be] = _time(fn, args.repeat)
        results[name] = row

    if args.json:
        print(json.dumps(results, indent=1))
        return
    print(f"{'kernel':42s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, row in results.items():
        nb = row.get("numba")
        speed = f"{row['numpy'] / nb:7.1f}x" if nb else "    n/a"
        nb_s = f"{nb * 1e3:10.2f}" if nb else f"{'n/a':>10s}"
        print(f"{name:42s} {row['numpy'] * 1e3:10.2f} {nb_s} {speed}")


if __name__ == "__main__":
    main()
