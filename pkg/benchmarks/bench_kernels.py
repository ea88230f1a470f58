#!/usr/bin/env python3
"""Benchmark the compiled kernel against the pure-Python fallback.

Times the scalar posterior math and the full per-scene update loop on
synthetic workloads of increasing size, then cross-checks that both
backends produced identical numbers.

Usage: python benchmarks/bench_kernels.py [--scenes 300]
"""

import argparse
import time

import numpy as np

from ctxrescore._kernels import _pure

try:
    from ctxrescore._kernels import _core
except ImportError:
    _core = None


def time_call(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_scalar(impl, n=200_000):
    rng = np.random.default_rng(0)
    a = rng.uniform(0, 1, n)
    h = rng.uniform(0, 1, n)
    p = rng.uniform(0.001, 0.999, n)

    def run():
        total = 0.0
        for i in range(n):
            total += impl.combine(a[i], h[i], p[i])
            total += impl.posterior_derivative(a[i], h[i], p[i])
        return total

    return time_call(run)


def make_scene(rng, n):
    return (
        rng.uniform(0.02, 0.98, n),
        rng.uniform(0.005, 0.3, n),
        np.ones(n, dtype=np.int8),
        rng.uniform(0, 1, (n, n)), rng.uniform(0, 1, (n, n)),
        rng.integers(0, 60, (n, n)).astype(np.float64),
        rng.integers(0, 60, (n, n)).astype(np.float64),
        rng.uniform(0, 1, (n, n, n)), rng.uniform(0, 1, (n, n, n)),
        rng.uniform(0, 1, (n, n, n)),
        rng.integers(0, 60, (n, n, n)).astype(np.float64),
        rng.integers(0, 60, (n, n, n)).astype(np.float64),
        rng.integers(0, 60, (n, n, n)).astype(np.float64),
    )


def bench_scenes(impl, scenes, iterations=1, gate_mode=1):
    results = []

    def run():
        results.clear()
        for args in scenes:
            n = len(args[0])
            beliefs = args[0].copy()
            nbr_a = np.full(n, -1, dtype=np.int64)
            nbr_b = np.full(n, -1, dtype=np.int64)
            gated = np.zeros(n, dtype=np.int8)
            impl.run_scene(*args, beliefs, nbr_a, nbr_b, gated,
                           iterations, 2, True, gate_mode, 10.0, 0.1, 0.1)
            results.append(beliefs)
        return results

    elapsed = time_call(run)
    return elapsed, [r.copy() for r in results]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenes", type=int, default=300,
                        help="scenes per size bucket")
    args = parser.parse_args()

    if _core is None:
        print("compiled kernel unavailable; build with "
              "`pip install -e . --no-build-isolation`")
        return

    print(f"{'benchmark':<28}{'pure':>12}{'compiled':>12}{'speedup':>10}")

    t_pure = bench_scalar(_pure)
    t_core = bench_scalar(_core)
    print(f"{'scalar posterior ops':<28}{t_pure:>11.3f}s{t_core:>11.3f}s"
          f"{t_pure / t_core:>9.1f}x")

    rng = np.random.default_rng(1)
    for size in (4, 8, 16):
        scenes = [make_scene(rng, size) for _ in range(args.scenes)]
        t_pure, out_pure = bench_scenes(_pure, scenes)
        t_core, out_core = bench_scenes(_core, scenes)
        identical = all(np.array_equal(a, b)
                        for a, b in zip(out_pure, out_core))
        label = f"scene updates (V={size})"
        print(f"{label:<28}{t_pure:>11.3f}s{t_core:>11.3f}s"
              f"{t_pure / t_core:>9.1f}x   bitwise-equal={identical}")


if __name__ == "__main__":
    main()
