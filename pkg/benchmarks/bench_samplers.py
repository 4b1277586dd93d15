"""Compare the compiled sampling kernels against the numpy fallback.

Run: python benchmarks/bench_samplers.py

Covers the two regimes that matter in practice: large batched draws (the
statistical verification suites) and many small batches (the training
loop, one small batch per step). Also asserts the backends agree bit for
bit on every draw they produce.
"""

import time

import numpy as np

from stairdiff import lattice
from stairdiff._kernels import _fallback

try:
    from stairdiff._kernels import _native
except ImportError:
    _native = None


def bench(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def anchored_case(F, T, n, batches):
    tables = lattice.build_count_tables(F, T)
    rng = np.random.default_rng(0)
    us = [rng.random((n, F + 2)) for _ in range(batches)]

    def run(mod):
        out = None
        for u in us:
            out = mod.anchored_draws(tables._cum_end, tables._cum_start, u, F, T)
        return out

    return run


def sequential_case(F, T, n, batches):
    rng = np.random.default_rng(1)
    us = [rng.random((n, F)) for _ in range(batches)]

    def run(mod):
        out = None
        for u in us:
            out = mod.sequential_draws(u, F, T)
        return out

    return run


CASES = [
    ("anchored  F=16 T=1000  1x500k draws", anchored_case(16, 1000, 500_000, 1)),
    ("anchored  F=3  T=4     1x500k draws", anchored_case(3, 4, 500_000, 1)),
    ("anchored  F=8  T=100   2000x16 draws", anchored_case(8, 100, 16, 2000)),
    ("sequential F=16 T=1000 1x500k draws", sequential_case(16, 1000, 500_000, 1)),
    ("sequential F=16 T=1000 2000x16 draws", sequential_case(16, 1000, 16, 2000)),
]


def main():
    if _native is None:
        print("compiled kernels not built; showing the fallback only")
    print(f"{'case':<40s} {'numpy':>10s} {'native':>10s} {'speedup':>8s}")
    for name, runner in CASES:
        t_py, out_py = bench(runner, _fallback)
        if _native is None:
            print(f"{name:<40s} {t_py * 1e3:>8.1f}ms {'-':>10s} {'-':>8s}")
            continue
        t_nat, out_nat = bench(runner, _native)
        assert np.array_equal(out_py, out_nat), f"backend mismatch in {name}"
        print(
            f"{name:<40s} {t_py * 1e3:>8.1f}ms {t_nat * 1e3:>8.1f}ms "
            f"{t_py / t_nat:>7.1f}x"
        )


if __name__ == "__main__":
    main()
