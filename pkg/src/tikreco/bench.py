"""Timing harnesses: method comparison and numba-vs-numpy kernel comparison.

Method timings exclude preprocessing (factorization, row selection) by
default since that work is done once per operator, not once per
measurement; pass ``include_preprocessing=True`` to charge it anyway.
"""
import time

import numpy as np

from ._accel import HAVE_NUMBA
from .direct import filtered_inverse
from .kaczmarz import KaczmarzConfig, kaczmarz_solve
from .rsvd import rsvd


def _timed(fn, repeats):
    times = []
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return result, times


def bench_methods(n=2000, m=400, k=100, repeats=5, alpha=1e-2, sweeps=20,
                  methods=("STD", "rSVD1", "rSVD2"), seed=0,
                  include_preprocessing=False, backend=None):
    """Wall-time table over reconstruction methods on one random problem.

    Returns rows (method, k, mean_s, std_s, median_s). The Gaussian test
    operator is deliberately unstructured: only the iteration volume
    matters for the timing comparison.
    """
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, m))
    y = A @ np.abs(rng.standard_normal(m)) + 0.01 * rng.standard_normal(n)

    factors = None
    prep_time = 0.0
    if any(name.startswith("rSVD") for name in methods):
        t0 = time.perf_counter()
        factors = rsvd(A, k, seed=seed)
        prep_time = time.perf_counter() - t0
        B = factors.S[:, None] * factors.V.T

    # warm up the jit compilation outside the timed region
    cfg_warm = KaczmarzConfig(alpha=alpha, sweeps=1)
    kaczmarz_solve(A[: min(8, n)], y[: min(8, n)], cfg_warm, backend=backend)

    rows = []
    for name in methods:
        if name == "STD":
            cfg = KaczmarzConfig(alpha=alpha, sweeps=sweeps)
            _, times = _timed(
                lambda: kaczmarz_solve(A, y, cfg, method="STD", backend=backend),
                repeats,
            )
            extra = 0.0
        elif name == "rSVD1":
            cfg = KaczmarzConfig(alpha=alpha, sweeps=sweeps)

            def run_rsvd1():
                z = factors.U.T @ y  # per-measurement projection is charged
                return kaczmarz_solve(B, z, cfg, method="rSVD1", backend=backend)

            _, times = _timed(run_rsvd1, repeats)
            extra = prep_time
        elif name == "rSVD2":
            _, times = _timed(lambda: filtered_inverse(factors, y, alpha), repeats)
            extra = prep_time
        else:
            raise ValueError(f"unknown bench method {name!r}")
        if include_preprocessing:
            times = [t + extra for t in times]
        rows.append(
            (name, k if name != "STD" else "",
             float(np.mean(times)), float(np.std(times)), float(np.median(times)))
        )
    return rows


def bench_kernels(n=2000, m=400, repeats=5, alpha=1e-2, sweeps=20, seed=0):
    """Compare the compiled and the pure-numpy sweep kernel on one problem.

    Returns rows (backend, mean_s, std_s, median_s, max_abs_diff) where the
    diff column reports the largest elementwise deviation between the two
    solutions (the kernels share one source, so this stays at rounding level).
    """
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, m))
    y = A @ np.abs(rng.standard_normal(m))
    cfg = KaczmarzConfig(alpha=alpha, sweeps=sweeps)

    backends = ["numpy"]
    if HAVE_NUMBA:
        backends.insert(0, "numba")
        kaczmarz_solve(A[:8], y[:8], KaczmarzConfig(alpha=alpha, sweeps=1),
                       backend="numba")  # compile outside the timing

    solutions = {}
    rows = []
    for backend in backends:
        result, times = _timed(
            lambda: kaczmarz_solve(A, y, cfg, backend=backend), repeats
        )
        solutions[backend] = result.x
        rows.append((backend, float(np.mean(times)), float(np.std(times)),
                     float(np.median(times))))
    if len(solutions) == 2:
        diff = float(np.abs(solutions["numba"] - solutions["numpy"]).max())
    else:
        diff = float("nan")
    return [row + (diff,) for row in rows]
