"""Time the compiled projection loop against the blocked numpy kernel.

    python3 benchmarks/bench_kernels.py [--samples N] [--freqs K] [--repeat R]
"""
import argparse
import timeit

import numpy as np

from freqsep import kernels


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=20_001)
    ap.add_argument("--freqs", type=int, default=2_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    x = rng.normal(size=args.samples)
    om = np.linspace(0.0, 30.0, args.freqs)
    kernels.project_jit(x[:8], 0.0, 0.01, om[:2])  # compile outside the timing

    diff = np.max(np.abs(kernels.project_jit(x, 0.0, 0.01, om) - kernels.project_numpy(x, 0.0, 0.01, om)))
    print(f"samples={args.samples} freqs={args.freqs} max|numba-numpy|={diff:.2e}")
    for name, fn in [("numba", kernels.project_jit), ("numpy", kernels.project_numpy)]:
        best = min(timeit.repeat(lambda: fn(x, 0.0, 0.01, om), number=1, repeat=args.repeat))
        print(f"{name:6s} {best * 1e3:9.1f} ms")


if __name__ == "__main__":
    main()
