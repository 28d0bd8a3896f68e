"""Compiled vs fallback timing of the sparse trilinear form b(u, v).

    python benchmarks/bench_kernels.py [--K 2] [--batch 1 32] [--repeat 20]
"""

import argparse
import time

import numpy as np

from roughhom import kernels
from roughhom.fluid import TorusBasis


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=3)
    ap.add_argument("--K", type=int, default=2)
    ap.add_argument("--batch", type=int, nargs="+", default=[1, 32])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    basis = TorusBasis(args.d, args.K)
    form = basis.trilinear
    rng = np.random.default_rng(0)
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    print(f"basis d={args.d} K={args.K}: N={form.n}, nnz={form.nnz}; "
          f"default backend {kernels.BACKEND}")
    print(f"{'op':<10}{'batch':>6}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for R in args.batch:
        U, V = rng.standard_normal((2, R, form.n))
        row = [best_of(lambda b=b: form.apply(U, V, backend=b), args.repeat) for b in backends]
        if len(row) == 2:
            assert np.allclose(form.apply(U, V, backend="python"),
                               form.apply(U, V, backend="cython"), atol=1e-12)
        sp = f"{row[0] / row[-1]:>9.1f}x" if len(row) == 2 else ""
        print(f"{'apply':<10}{R:>6}" + "".join(f"{t * 1e3:>10.3f}ms" for t in row) + sp)
    u = rng.standard_normal(form.n)
    row = [best_of(lambda b=b: form.matrix(u, backend=b), args.repeat) for b in backends]
    sp = f"{row[0] / row[-1]:>9.1f}x" if len(row) == 2 else ""
    print(f"{'matrix':<10}{1:>6}" + "".join(f"{t * 1e3:>10.3f}ms" for t in row) + sp)


if __name__ == "__main__":
    main()
