"""Benchmark the compiled CSR kernels against the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--n 20000] [--degree 20]
                                          [--cols 8] [--repeats 5]

Times each kernel on a random directed graph with both backends and prints
the speedup.  The compiled backend must be built (pip install -e .) or the
script reports fallback-only numbers.
"""

import argparse
import time

import numpy as np

import glinkx.kernels as K
from glinkx.graph import build_graph


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--n", type=int, default=20000)
    parser.add_argument("--degree", type=int, default=20)
    parser.add_argument("--cols", type=int, default=8)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    pairs = rng.integers(0, args.n, size=(args.n * args.degree, 2))
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    g = build_graph(pairs, args.n, symmetrize=True)
    labels = rng.integers(0, args.cols, args.n)
    mask = rng.random(args.n) < 0.6
    rows = rng.normal(size=(args.n, args.cols))
    data = rng.normal(size=g.m)
    batch_ids = rng.integers(0, args.n, size=4096)
    weight = rng.normal(size=(args.n, 64))
    grad = rng.normal(size=(4096, 64))

    impls = {"python": K.get_backend("py")}
    try:
        impls["c"] = K.get_backend("c")
    except ImportError:
        print("compiled backend unavailable; showing fallback only")

    bench = {
        "label_mean": lambda impl: K.label_mean_csr(
            g.in_offsets, g.in_sources, labels, mask, args.cols, impl=impl),
        "row_mean": lambda impl: K.row_mean_csr(
            g.out_offsets, g.out_targets, rows, impl=impl),
        "spmm": lambda impl: K.spmm_csr(
            g.out_offsets, g.out_targets, data, rows, impl=impl),
        "rows_matmul": lambda impl: K.csr_rows_matmul(
            g.out_offsets, g.out_targets, batch_ids, weight, impl=impl),
        "rows_matmul_t": lambda impl: K.csr_rows_matmul_t_add(
            g.out_offsets, g.out_targets, batch_ids, grad,
            np.zeros_like(weight), impl=impl),
        "square_support": lambda impl: K.square_support(
            g.out_offsets, g.out_targets, g.n, impl=impl),
    }

    print(f"graph: n={g.n} m={g.m} cols={args.cols} "
          f"(best of {args.repeats})")
    header = f"{'kernel':<16}" + "".join(f"{name:>12}" for name in impls)
    if len(impls) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name, fn in bench.items():
        times = {b: timeit(lambda impl=impl: fn(impl), args.repeats)
                 for b, impl in impls.items()}
        line = f"{name:<16}" + "".join(f"{times[b] * 1e3:>10.2f}ms"
                                       for b in impls)
        if len(impls) == 2:
            line += f"{times['python'] / times['c']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
