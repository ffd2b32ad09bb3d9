"""Compare the compiled Kalman filter kernel against the numpy fallback.

The filter is the one sequential inner loop in the package: every
counterfactual fit runs it over a 36-cell variance grid, and the null
calibration suite repeats that hundreds of times. Run:

    python benchmarks/bench_statespace.py
"""

from __future__ import annotations

import time

import numpy as np

from faultline import _statespace_py

try:
    from faultline import _statespace
except ImportError:
    _statespace = None


def make_workload(n: int, seed: int = 7):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((seed,))))
    level = np.cumsum(rng.standard_normal(n) * 0.05)
    y = level + rng.standard_normal(n) * 0.3
    sigmas = np.asarray([0.01, 0.03, 0.1, 0.3, 1.0, 3.0])
    obs, state = [g.ravel() for g in np.meshgrid(sigmas ** 2, sigmas ** 2,
                                                 indexing="ij")]
    return y, obs, state


def bench(fn, y, obs, state, repeats: int) -> float:
    fn(y, obs, state)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(y, obs, state)
    return (time.perf_counter() - t0) / repeats


def main():
    repeats = 200
    for n in (100, 200, 500, 2000):
        y, obs, state = make_workload(n)
        t_py = bench(_statespace_py.local_level_filter, y, obs, state, repeats)
        line = f"n={n:5d}  python {t_py * 1e3:8.3f} ms"
        if _statespace is not None:
            t_cy = bench(_statespace.local_level_filter, y, obs, state, repeats)
            line += f"  cython {t_cy * 1e3:8.3f} ms  speedup {t_py / t_cy:5.1f}x"
            ll_py = _statespace_py.local_level_filter(y, obs, state)[0]
            ll_cy = _statespace.local_level_filter(y, obs, state)[0]
            assert np.allclose(ll_py, ll_cy, rtol=0, atol=1e-9), "backends disagree"
        else:
            line += "  (compiled backend unavailable)"
        print(line)


if __name__ == "__main__":
    main()
