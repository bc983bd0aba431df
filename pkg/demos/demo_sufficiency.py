"""Decide when enough crystals have been measured.

Simulates a growing dataset of crystal areas, tracks the averaged
Wasserstein distance between consecutive batch increments for several
batch sizes, and applies the stopping rule.

Run:
    python demos/demo_sufficiency.py
"""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from crystalscan.sufficiency import (full_vs_one_batch_less,
                                     increment_analysis, stopping_decision)

OUT = Path(__file__).parent / "output" / "sufficiency"
OUT.mkdir(parents=True, exist_ok=True)

# stand-in for measured crystal areas: a long-tailed population
rng = np.random.default_rng(42)
areas = rng.lognormal(mean=5.0, sigma=0.9, size=900)
print(f"population: {len(areas)} areas, median {np.median(areas):.0f} nm^2")

fig, ax = plt.subplots(figsize=(8, 5))
for batch in (84, 42, 21, 10):
    curve = increment_analysis(areas, batch_size=batch, reps=10, seed=1)
    ax.plot(curve.counts, curve.distances, label=f"batch = {batch}")
    removal = full_vs_one_batch_less(areas, batch, reps=10, seed=1)
    # scale the stopping threshold to the batch size: half again the
    # distance the full dataset moves when one batch is removed
    threshold = 1.5 * removal
    decision = stopping_decision(curve, threshold=threshold, consecutive=3)
    stop = (f"stop at {decision.stop_count} crystals"
            if decision.should_stop else "never stops")
    print(f"batch {batch:3d}: one-batch-removal scale {removal:7.2f}  "
          f"threshold {threshold:7.2f} -> {stop}")

ax.set_xlabel("Crystal count")
ax.set_ylabel("Avg. Wasserstein distance")
ax.set_title("Distribution drift per added batch")
ax.legend()
fig.tight_layout()
fig.savefig(OUT / "sufficiency_curves.png")
print(f"\ncurves written to {OUT / 'sufficiency_curves.png'}")

# larger batches move the distribution more per increment, so their
# removal distances are ordered by batch size
removals = [full_vs_one_batch_less(areas, b, reps=10, seed=1)
            for b in (10, 21, 42, 84)]
print("removal distances by batch size 10/21/42/84:",
      " < ".join(f"{r:.2f}" for r in removals))
assert removals == sorted(removals)
