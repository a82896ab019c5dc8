"""Benchmark the nonsignaling-MLE kernel: numba @njit vs pure-numpy fallback.

Usage: python benchmarks/bench_mle.py [n_tables]

The same solver backs both paths (see bellsim.kernels); this script times
them head to head on identical random tables and checks that they agree.
The numpy path is what you get at runtime with BELLSIM_DISABLE_NUMBA=1.
"""

import sys
import time

import numpy as np

from bellsim import kernels


def make_tables(n: int, rng: np.random.Generator) -> list[np.ndarray]:
    tables = []
    for _ in range(n):
        scale = rng.integers(500, 50_000)
        tab = rng.poisson(scale, size=16).astype(float)
        tab[0] *= rng.uniform(1.0, 1.1)  # a dash of signaling
        tables.append(tab)
    return tables


def bench(fn, tables) -> tuple[float, list[float]]:
    results = []
    start = time.perf_counter()
    for tab in tables:
        _, f, status = fn(tab)
        assert status == kernels.STATUS_OK
        results.append(f)
    return (time.perf_counter() - start) / len(tables), results


def main() -> int:
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    tables = make_tables(n, np.random.default_rng(7))

    t_np, f_np = bench(kernels.solve_ns_mle_numpy, tables)
    print(f"numpy fallback : {t_np * 1e6:9.1f} us/solve over {n} tables")

    if not kernels.HAVE_NUMBA:
        print("numba          : not installed, skipping")
        return 0

    kernels.solve_ns_mle_numba(tables[0])  # trigger compilation outside timing
    t_nb, f_nb = bench(kernels.solve_ns_mle_numba, tables)
    print(f"numba @njit    : {t_nb * 1e6:9.1f} us/solve over {n} tables")
    print(f"speedup        : {t_np / t_nb:9.1f}x")

    worst = max(
        abs(a - b) / (1.0 + abs(a)) for a, b in zip(f_np, f_nb)
    )
    print(f"max |logL gap| : {worst:9.2e} (relative)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
