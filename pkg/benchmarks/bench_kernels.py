"""Benchmark the compiled metric kernels against the pure-Python fallback.

Run: python3 benchmarks/bench_kernels.py
"""

from __future__ import annotations

import time

import numpy as np

from rallynet.metrics import BACKEND, _reference

try:
    from rallynet.metrics import _kernels
except ImportError:
    _kernels = None


def _time(fn, *args, repeat: int = 5) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    print(f"active backend: {BACKEND}")
    if _kernels is None:
        print("compiled kernels unavailable; timing the fallback only")

    for n in (50, 200, 500):
        cost = rng.random((n, n))
        ref = _time(_reference.dtw_accumulate, cost)
        line = f"dtw {n}x{n}: python {ref * 1e3:8.2f} ms"
        if _kernels is not None:
            fast = _time(_kernels.dtw_accumulate, cost)
            assert abs(_kernels.dtw_accumulate(cost) - _reference.dtw_accumulate(cost)) < 1e-9
            line += f"   cython {fast * 1e3:8.2f} ms   speedup {ref / fast:6.1f}x"
        print(line)

    for T, L in ((50, 10), (200, 40), (500, 100)):
        probs = rng.dirichlet(np.ones(13), size=T)
        log_probs = np.log(probs)
        labels = rng.integers(0, 12, size=L)
        ref = _time(_reference.ctc_forward_nll, log_probs, labels, 12)
        line = f"ctc T={T} L={L}: python {ref * 1e3:8.2f} ms"
        if _kernels is not None:
            fast = _time(_kernels.ctc_forward_nll, log_probs, labels, 12)
            a = _kernels.ctc_forward_nll(log_probs, labels, 12)
            b = _reference.ctc_forward_nll(log_probs, labels, 12)
            assert abs(a - b) < 1e-9
            line += f"   cython {fast * 1e3:8.2f} ms   speedup {ref / fast:6.1f}x"
        print(line)


if __name__ == "__main__":
    main()
