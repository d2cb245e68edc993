"""Compare the compiled and numpy inner-loop kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from cpx import kernels
from cpx.dataio import SyntheticLsSpec, gen_synthetic_ls

SHAPES = [(25, 20, 5), (25, 20, 20), (25, 100, 10), (100, 50, 10)]  # (m, d, K)


def bench(m, d, K, repeat):
    problem, _ = gen_synthetic_ls(SyntheticLsSpec(m=m, n=2 * d, d=d), certify=False)
    G, c = problem.grams, problem.atbs
    rng = np.random.default_rng(0)
    x0, anchor, shift = (rng.normal(size=(m, d)) for _ in range(3))
    step = 0.5 / problem.lipschitz
    out = {}
    for backend in ("python", "cython"):
        fn = lambda: kernels.quad_steps(G, c, x0, anchor, shift, step, 1.0, K, backend=backend)  # noqa: E731
        out[backend] = min(timeit.repeat(fn, number=1, repeat=repeat))
        res = fn()
        out[backend + "_x"] = res[0]
    err = float(np.max(np.abs(out["python_x"] - out["cython_x"])))
    return out["python"], out["cython"], err


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if kernels.BACKEND != "cython":
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return
    print(f"{'m':>4} {'d':>4} {'K':>3} {'numpy [ms]':>11} {'cython [ms]':>12} {'speedup':>8} {'max diff':>9}")
    for m, d, K in SHAPES:
        tp, tc, err = bench(m, d, K, args.repeat)
        print(f"{m:4d} {d:4d} {K:3d} {1e3 * tp:11.3f} {1e3 * tc:12.3f} {tp / tc:8.2f} {err:9.1e}")


if __name__ == "__main__":
    main()
