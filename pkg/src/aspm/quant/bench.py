"""Sequential single-period inference timing."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

FULL_NIGHT_PERIODS = 480


@dataclass(frozen=True)
class BenchResult:
    n_periods: int
    mean_ms: float       # per period, from the median run
    total_ms: float      # median over the timed runs
    runs_ms: tuple       # every timed run


def bench_inference(model, periods=None, n_periods: int = FULL_NIGHT_PERIODS, warmup: int = 10,
                    repeats: int = 3, seed: int = 0) -> BenchResult:
    """Time one-at-a-time inference over ``n_periods`` periods.

    ``warmup`` inferences run first and are not timed.  The night is then
    classified ``repeats`` times and the median total is reported, with
    ``mean_ms = total_ms / n_periods``.  Without ``periods`` a seeded
    standard-normal night is used; shorter inputs are cycled.
    """
    if n_periods < 1 or repeats < 1 or warmup < 0:
        raise ValueError("n_periods and repeats must be positive, warmup non-negative")
    length = model.spec.input_length
    if periods is None:
        periods = np.random.default_rng(seed).standard_normal((n_periods, length))
    x = np.asarray(periods, dtype=np.float32)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("periods must be a non-empty (n, length) array")
    rows = [x[i % len(x)][None, :] for i in range(n_periods)]
    for i in range(warmup):
        model.logits(rows[i % n_periods])
    runs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for row in rows:
            model.logits(row)
        runs.append((time.perf_counter() - t0) * 1e3)
    total = float(np.median(runs))
    return BenchResult(n_periods, total / n_periods, total, tuple(runs))
