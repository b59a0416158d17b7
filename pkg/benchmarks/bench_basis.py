"""Benchmark: numba-compiled vs pure-numpy modal basis kernels.

The basis evaluation (values + gradients at quadrature point sets) is the
hot inner kernel behind every trace matrix and assembly table.  Run:

    python3 benchmarks/bench_basis.py [--degrees 4,8,12] [--points 2000]

The numba backend is what PATCHEXT_BACKEND=auto selects when numba is
importable; PATCHEXT_BACKEND=numpy forces the fallback.
"""

import argparse
import time

import numpy as np

from patchext import _kernels as np_kernels

try:
    from patchext import _kernels_numba as nb_kernels
except ImportError:
    nb_kernels = None


def bench(fn, *args, repeat=5):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--degrees", default="4,8,12")
    ap.add_argument("--points", type=int, default=2000)
    args = ap.parse_args()
    degrees = [int(x) for x in args.degrees.split(",")]

    rng = np.random.default_rng(0)
    pts3 = rng.random((args.points, 3))
    pts3 /= (pts3.sum(axis=1)[:, None] + 1.0)
    pts2 = pts3[:, :2]

    if nb_kernels is None:
        print("numba not importable; nothing to compare")
        return

    print(f"{args.points} points, best of 5 runs")
    print(f"{'kernel':<16}{'p':>4}{'numpy [ms]':>14}{'numba [ms]':>14}{'speedup':>10}")
    for p in degrees:
        for name, f_np, f_nb, pts in (
                ("tet value+grad", np_kernels.tet_onb_raw,
                 nb_kernels.tet_onb_raw, pts3),
                ("tri value+grad", np_kernels.tri_onb_raw,
                 nb_kernels.tri_onb_raw, pts2),
                ("tet homogeneous", np_kernels.tet_homog_raw,
                 nb_kernels.tet_homog_raw, pts3)):
            f_nb(pts[:4], p)                   # trigger compilation
            t_np = bench(f_np, pts, p)
            t_nb = bench(f_nb, pts, p)
            a = f_np(pts, p)
            b = f_nb(pts, p)
            if isinstance(a, tuple):
                assert all(np.array_equal(x, y) for x, y in zip(a, b))
            else:
                assert np.array_equal(a, b)
            print(f"{name:<16}{p:>4}{1e3 * t_np:>14.2f}{1e3 * t_nb:>14.2f}"
                  f"{t_np / t_nb:>10.2f}")


if __name__ == "__main__":
    main()
