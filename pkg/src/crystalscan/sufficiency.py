"""Data-sufficiency analysis with the 1D Wasserstein distance.

As crystals accumulate batch by batch, the Wasserstein distance between
consecutive increments of the feature distribution shrinks; once it stays
below a batch-size-scaled threshold, further acquisition adds little.  The
paired t-test used to compare parameter sets lives here too.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wasserstein_1d(a, b) -> float:
    """First-order Wasserstein distance between two 1D samples.

    Equal-size samples use the sorted-difference mean; unequal sizes use
    the exact quantile-function integral of the two empirical CDFs.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be non-empty")
    if a.size == b.size:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    # merged-breakpoint integral of |F_a - F_b|
    a_sorted = np.sort(a)
    b_sorted = np.sort(b)
    grid = np.sort(np.concatenate([a_sorted, b_sorted]))
    deltas = np.diff(grid)
    cdf_a = np.searchsorted(a_sorted, grid[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b_sorted, grid[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


@dataclass(frozen=True)
class SufficiencyCurve:
    """Averaged consecutive-increment Wasserstein distances."""

    batch_size: int
    points: list[tuple[int, float]]  # (cumulative crystal count, mean W1)
    repetitions: int
    seed: int

    @property
    def counts(self) -> list[int]:
        return [c for c, _ in self.points]

    @property
    def distances(self) -> list[float]:
        return [w for _, w in self.points]


@dataclass(frozen=True)
class StoppingDecision:
    """Outcome of the stop-collecting test on a sufficiency curve."""

    threshold: float
    consecutive_required: int
    stop_index: int | None        # 1-based curve index where the run completes
    stop_count: int | None        # cumulative crystal count at that point

    @property
    def should_stop(self) -> bool:
        return self.stop_index is not None


def increment_analysis(values, batch_size: int, reps: int = 10,
                       seed: int = 0) -> SufficiencyCurve:
    """Wasserstein trace of growing the dataset one batch at a time.

    At increment i the first i batches are compared against ``reps`` random
    (i-1)-batch subsamples of themselves, drawn without replacement; the
    mean distance is recorded.  Deterministic for a given seed.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    if len(values) < 2 * batch_size:
        raise ValueError("need at least two batches of values")
    points = []
    n_batches = len(values) // batch_size
    for i in range(2, n_batches + 1):
        prefix = values[:i * batch_size]
        distances = [
            wasserstein_1d(_subsample(prefix, (i - 1) * batch_size,
                                      (seed, i, rep)), prefix)
            for rep in range(reps)
        ]
        points.append((i * batch_size, float(np.mean(distances))))
    return SufficiencyCurve(batch_size=batch_size, points=points,
                            repetitions=reps, seed=seed)


def _subsample(values: np.ndarray, size: int, seed_key) -> np.ndarray:
    rng = np.random.default_rng(seed_key)
    idx = rng.choice(len(values), size=size, replace=False)
    return values[idx]


def full_vs_one_batch_less(values, batch_size: int, reps: int = 10,
                           seed: int = 0) -> float:
    """Mean W1 between the full sample and random one-batch-smaller subsets."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if batch_size < 0:
        raise ValueError("batch_size must be >= 0")
    if batch_size == 0:
        return 0.0
    if len(values) <= batch_size:
        raise ValueError("need more values than one batch")
    distances = [
        wasserstein_1d(_subsample(values, len(values) - batch_size,
                                  (seed, rep)), values)
        for rep in range(reps)
    ]
    return float(np.mean(distances))


def stopping_decision(curve: SufficiencyCurve, threshold: float,
                      consecutive: int = 3) -> StoppingDecision:
    """First curve point completing ``consecutive`` sub-threshold increments."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if consecutive < 1:
        raise ValueError("consecutive must be >= 1")
    run = 0
    for i, (count, w) in enumerate(curve.points, start=1):
        run = run + 1 if w < threshold else 0
        if run >= consecutive:
            return StoppingDecision(threshold=threshold,
                                    consecutive_required=consecutive,
                                    stop_index=i, stop_count=count)
    return StoppingDecision(threshold=threshold,
                            consecutive_required=consecutive,
                            stop_index=None, stop_count=None)


def paired_t_test(before, after) -> tuple[float, float, float]:
    """Paired t statistics: (mean difference, sample std, t value).

    Differences are after - before; the std uses the n-1 denominator and
    t = mean / (std / sqrt(n)).  Identical-up-to-a-shift inputs with zero
    spread are rejected as degenerate.
    """
    before = np.asarray(before, dtype=np.float64).ravel()
    after = np.asarray(after, dtype=np.float64).ravel()
    if before.shape != after.shape:
        raise ValueError("paired samples must have equal length")
    n = before.size
    if n < 2:
        raise ValueError("need at least two pairs")
    d = after - before
    mean_diff = float(d.mean())
    sd_diff = float(d.std(ddof=1))
    if sd_diff == 0.0:
        raise ValueError("degenerate differences: zero standard deviation")
    t = mean_diff / (sd_diff / math.sqrt(n))
    return mean_diff, sd_diff, t
