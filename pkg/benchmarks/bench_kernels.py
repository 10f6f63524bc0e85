"""Time the numba kernels against their numpy twins on rts24-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 20]

Both versions are checked for agreement before timing.  The first numba
call (compilation, or loading the on-disk cache) is reported separately.
"""

import argparse
import time

import numpy as np

from drdispatch import kernels
from drdispatch._accel import NUMBA_AVAILABLE


def best_of(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    pts = rng.uniform(80, 120, (50, 3))
    normal = np.array([0.8, -0.5, 0.33])
    normal /= np.linalg.norm(normal)
    lo, hi = np.full(3, 80.0), np.full(3, 120.0)
    d = rng.exponential(2.0, 50)
    a = rng.normal(size=(3, 3))
    K, n_xi = 4926, 6
    offset = rng.normal(-30, 5, K)
    coef = rng.normal(0, 0.2, (K, n_xi))
    xi = rng.uniform(80, 120, (10_000, n_xi))
    family = rng.integers(0, 3, K).astype(np.int64)
    return {
        "box_hyperplane_distance (50 pts, 3-D)": ("box_hyperplane_distance", (pts, normal, 100.0 * normal.sum(), lo, hi)),
        "worst_case_prob (N=50)": ("worst_case_prob", (d, 1e-3)),
        "jacobi_eig (3x3)": ("jacobi_eig", (a + a.T, 1e-12, 100)),
        "count_violations (4926 rows x 10k samples)": ("count_violations", (offset, coef, xi, 1e-6, family, 3)),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-10)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not NUMBA_AVAILABLE:
        raise SystemExit("numba is unavailable or disabled (DRDISPATCH_NO_NUMBA); nothing to compare")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':45s} {'first nb call':>14s} {'numba':>11s} {'numpy':>11s} {'speed-up':>9s}")
    for label, (name, inputs) in cases(rng).items():
        nb = getattr(kernels, name + "_nb")
        npy = getattr(kernels, name + "_np")
        t0 = time.perf_counter()
        out_nb = nb(*inputs)
        first = time.perf_counter() - t0
        out_np = npy(*inputs)
        if name == "jacobi_eig":
            ok = np.allclose(np.sort(out_nb[0]), np.sort(out_np[0]))
        else:
            ok = same(out_nb, out_np)
        if not ok:
            raise SystemExit(f"{label}: numba and numpy results differ")
        rep = max(1, args.repeat // 10) if name == "count_violations" else args.repeat
        t_nb = best_of(nb, inputs, rep)
        t_np = best_of(npy, inputs, rep)
        print(f"{label:45s} {first * 1e3:11.1f} ms {t_nb * 1e6:8.1f} us {t_np * 1e6:8.1f} us {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
