"""Time the numba and numpy backends of the sampling kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per (kernel, backend) with the best wall time and checks the
two backends agree.
"""
import argparse
import time

import numpy as np

from udekit import _kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--paths", type=int, default=1000)
    args = parser.parse_args()
    backends = ["numpy"] + (["numba"] if _kernels.numba is not None else [])
    lam = np.random.default_rng(0).uniform(0.0, 20.0, 200_000)
    cases = {
        f"counter_normals {args.steps}x{args.paths}":
            lambda b: _kernels.counter_normals(1, args.steps, args.paths, 1, backend=b),
        f"poisson_counts {lam.size}": lambda b: _kernels.poisson_counts(lam, 1, backend=b),
    }
    for name, fn in cases.items():
        results = {}
        for b in backends:
            fn(b)  # warm-up (includes JIT compilation for numba)
            results[b] = fn(b)
            print(f"{name:32s} {b:6s} {best_of(lambda: fn(b), args.repeat) * 1e3:9.2f} ms")
        if len(results) == 2:
            diff = np.max(np.abs(results["numpy"] - results["numba"]))
            print(f"{name:32s} max |numpy - numba| = {diff:.3g}")


if __name__ == "__main__":
    main()
