#!/usr/bin/env python3
"""Benchmark the compiled solver kernel against the pure-Python fallback.

Times full pair solves (factorization + iteration loop) over batches of
seeded random instances at several set sizes, and reports per-solve times
plus speedup. Run after an editable install:

    python benchmarks/bench_kernels.py
"""

import argparse
import time

import numpy as np

from setmetric import Hyperparams, available_backends, solve_pair


def bench(backend: str, instances, h: Hyperparams, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for x, y in instances:
            solve_pair(x, y, 1, h, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best / len(instances)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--count", type=int, default=50, help="instances per size")
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    backends = available_backends()
    h = Hyperparams()
    rng = np.random.default_rng(args.seed)
    sizes = [(8, 3, 3), (16, 8, 8), (16, 20, 20), (32, 40, 40), (64, 80, 80)]

    print(f"{args.count} solves per size, best of {args.repeats} runs")
    header = f"{'D':>4} {'m':>4} {'n':>4}" + "".join(
        f" {b + ' (ms)':>14}" for b in backends
    )
    if len(backends) == 2:
        header += f" {'speedup':>9}"
    print(header)
    for d, m, n in sizes:
        instances = [
            (rng.standard_normal((d, m)), rng.standard_normal((d, n)))
            for _ in range(args.count)
        ]
        times = [bench(b, instances, h, args.repeats) for b in backends]
        row = f"{d:>4} {m:>4} {n:>4}" + "".join(f" {t * 1e3:>14.4f}" for t in times)
        if len(times) == 2:
            row += f" {times[0] / times[1]:>8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
