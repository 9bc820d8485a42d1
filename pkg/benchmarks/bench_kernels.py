"""Time each kernel on the numba and numpy paths.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

The numba path is warmed up once before timing so compilation is excluded.
Outputs of the two paths are compared and the max absolute difference shown.
"""

import argparse
import json
import os
import time

import numpy as np

from latentcausal import kernels
from latentcausal._accel import NUMBA_AVAILABLE

FLAG = "LATENTCAUSAL_NO_NUMBA"


def cases(rng):
    d, T = 8, 20_000
    A = 0.5 * np.eye(d) + 0.05 * rng.standard_normal((d, d))
    yield "var_recursion T=20000 d=8", kernels.var_recursion, (A, rng.standard_normal((T, d)), np.zeros(d))
    yield "bocpd_run_length T=1500", kernels.bocpd_run_length, (rng.standard_normal(1500), 1 / 250, 0.0, 1.0, 1.0, 1.0)
    n = 300
    K = rng.standard_normal((n, n))
    K = K @ K.T / n
    H = np.eye(n) - 1 / n
    perms = np.array([rng.permutation(n) for _ in range(200)])
    yield "hsic_permutation_stats n=300 P=200", kernels.hsic_permutation_stats, (H @ K @ H, H @ K.T @ H, perms)
    n = 2000
    perms = np.array([rng.permutation(n) for _ in range(200)])
    yield "rff_permutation_stats n=2000 D=50 P=200", kernels.rff_permutation_stats, (
        rng.standard_normal((n, 50)), rng.standard_normal((n, 50)), perms)


def timed(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args()
    rows = []
    for name, fn, a in cases(np.random.default_rng(0)):
        os.environ[FLAG] = "1"
        t_np, out_np = timed(fn, a, args.repeat)
        os.environ.pop(FLAG)
        if NUMBA_AVAILABLE:
            fn(*a)
            t_nb, out_nb = timed(fn, a, args.repeat)
            diff = float(np.max(np.abs(out_nb - out_np)))
        else:
            t_nb, diff = float("nan"), float("nan")
        rows.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb, "max_abs_diff": diff})
    print(f"{'kernel':42s} {'numpy s':>9s} {'numba s':>9s} {'speedup':>8s} {'max |diff|':>11s}")
    for r in rows:
        print(f"{r['kernel']:42s} {r['numpy_s']:9.4f} {r['numba_s']:9.4f} {r['speedup']:8.1f} {r['max_abs_diff']:11.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
