#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from scriptorium import _kernels_py

try:
    from scriptorium import _kernels
except ImportError:
    _kernels = None


def bench(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5, help="take the best of N runs")
    opts = parser.parse_args()

    rng = np.random.default_rng(0)

    def boxes(n):
        return np.hstack([rng.uniform(0, 600, (n, 2)), rng.uniform(1, 120, (n, 2))])

    cases = [
        ("iou_matrix 500x500", "iou_matrix", (boxes(500), boxes(500))),
        ("iou_matrix 2000x2000", "iou_matrix", (boxes(2000), boxes(2000))),
        ("greedy_match 300 dets / 300 gts", "greedy_match", (boxes(300), boxes(300), 0.5)),
        ("pairwise_cosine 340x512", "pairwise_cosine",
         (rng.uniform(0.05, 1.0, (340, 512)),)),
        ("pairwise_cosine 1000x64", "pairwise_cosine",
         (rng.uniform(0.05, 1.0, (1000, 64)),)),
    ]

    print(f"{'case':36} {'python':>10} {'cython':>10} {'speedup':>8}")
    for label, name, args in cases:
        py = bench(getattr(_kernels_py, name), args, opts.repeat)
        if _kernels is None:
            print(f"{label:36} {py * 1e3:9.2f}ms {'n/a':>10} {'n/a':>8}")
            continue
        cy = bench(getattr(_kernels, name), args, opts.repeat)
        print(f"{label:36} {py * 1e3:9.2f}ms {cy * 1e3:9.2f}ms {py / cy:7.1f}x")
    if _kernels is None:
        print("\ncompiled kernels not built; only the fallback was timed")


if __name__ == "__main__":
    main()
