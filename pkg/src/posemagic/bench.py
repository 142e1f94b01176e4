"""Wall-clock scaling of the sequential scan."""

from __future__ import annotations

import time

import numpy as np

from .ssm import ScanInputs, scan_parallel, scan_sequential

DEFAULT_LENGTHS = (512, 1024, 2048, 4096, 8192)


def time_scan(L: int, D: int = 4, n: int = 4, impl: str = "sequential", repeats: int = 5,
              seed: int = 0) -> float:
    """Best-of-``repeats`` milliseconds for one scan of length ``L``.

    The default state is small so the timing reflects the per-step loop, not
    cache misses once the arrays outgrow L2.
    """
    rng = np.random.default_rng(seed)
    inp = ScanInputs(rng.uniform(0.5, 0.99, (L, D, n)), rng.normal(size=(L, D, n)),
                     rng.normal(size=(L, n)))
    fn = scan_sequential if impl == "sequential" else scan_parallel
    fn(inp)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(inp)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def scaling_exponent(lengths, millis) -> float:
    """Slope of log(time) against log(L) by least squares."""
    slope, _ = np.polyfit(np.log(np.asarray(lengths, float)), np.log(np.asarray(millis, float)), 1)
    return float(slope)


def bench_scan(lengths=DEFAULT_LENGTHS, impl: str = "sequential", **kw) -> dict:
    points = [{"L": int(L), "ms": time_scan(int(L), impl=impl, **kw)} for L in lengths]
    return {"impl": impl, "points": points,
            "exponent": scaling_exponent([p["L"] for p in points], [p["ms"] for p in points])}
