"""
Merging with drop-and-rescale
=============================

DARE randomly zeroes entries of each model's delta from the base and scales
the survivors so that the expected merged model equals the plain weighted
average.  The spread around that mean shrinks as more seeds are averaged.
"""
import numpy as np

from hierdt import MergeConfig, ToyModel, merge_dare, merge_weighted, train_local
from hierdt.data import reference_task
from hierdt.merge import merge_report_rows

grammar, pool, _, _ = reference_task(seed=0)
base = ToyModel.uniform(grammar.vocab(), 3)
models = [train_local(base, ds, epochs=20, lr=10.0) for ds in pool[:4]]
scores = [len(ds) for ds in pool[:4]]
average = merge_weighted(models, scores).params.values

for drop in (0.0, 0.3, 0.5, 0.9):
    outs = np.array([merge_dare(models, scores, MergeConfig("dare", drop, base, seed=s)).params.values
                     for s in range(50)])
    single = np.abs(outs[0] - average).max()
    mean_gap = np.abs(outs.mean(axis=0) - average).max()
    print(f"drop {drop:.1f}: one merge deviates by {single:.3f}, the 50-seed mean by {mean_gap:.3f}")

for row in merge_report_rows(models, scores, MergeConfig("dare", 0.5, base, seed=0)):
    print({k: round(v, 3) if isinstance(v, float) else v for k, v in row.items()})
