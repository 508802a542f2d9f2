"""Benchmark the pairwise identity-score kernels: compiled vs NumPy.

The pairwise count dominates the Monte Carlo stages (synthetic FPR and
threshold calibration), so this is the number that decides end-to-end
runtime. Both backends must produce identical matrices.

Run from the repository root:  python3 benchmarks/bench_kernels.py
"""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from qsid._kernels import BACKEND, backends

SHAPES = [(100, 60), (300, 80), (500, 100), (700, 250)]
ALPHABET = 6


def time_kernel(fn, units, repeats=3):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn(units)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main():
    impls = backends()
    print(f"active backend: {BACKEND}; available: {', '.join(impls)}")
    print(f"{'shape':>12} " + " ".join(f"{name:>12}" for name in impls) + f" {'speedup':>9}")
    rng = np.random.default_rng(0)
    for n, p in SHAPES:
        units = (rng.integers(0, ALPHABET, size=(n, p)) * 25).astype(np.int64)
        times = {}
        outputs = {}
        for name, fn in impls.items():
            times[name], outputs[name] = time_kernel(fn, units)
        reference = outputs[next(iter(outputs))]
        for name, out in outputs.items():
            if not np.array_equal(out, reference):
                raise SystemExit(f"backend {name} disagrees at shape {(n, p)}")
        row = f"{f'{n}x{p}':>12} " + " ".join(
            f"{times[name] * 1000:>10.1f}ms" for name in impls
        )
        if len(times) == 2:
            py, comp = times["python"], times.get("compiled")
            row += f" {py / comp:>8.1f}x" if comp else ""
        print(row)
    print("outputs bit-identical across backends")


if __name__ == "__main__":
    main()
