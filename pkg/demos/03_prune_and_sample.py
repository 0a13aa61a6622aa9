"""Prune operations, then sample only paths the filter rates as strong.

Pruning first scores every (block, layer, width, expand) operation by the
filter's average score over paths that use it. It removes the weakest 10%
globally, then 30% of what is left inside each operation-cost bucket. Finally
it sets a per-bucket score threshold at the 25th percentile. Training then
draws paths by rejection against those thresholds.
"""

import numpy as np

from pathprune import (
    PathFilter, ScoredPath, SyntheticOracle, TrainConfig, count_paths, make_buckets, prune, sample_uniform,
    toy_space, train,
)
from pathprune.pruning import rejection_sample_many

space = toy_space()
buckets = make_buckets(space, 5)
oracle = SyntheticOracle(space)
rng = np.random.default_rng(1)
records = [ScoredPath.make(space, buckets, p, oracle(p)) for p in (sample_uniform(space, rng) for _ in range(800))]
model, _ = train(PathFilter(space, buckets, seed=0), records, TrainConfig(epochs=10))

pruned, state = prune(model, space, buckets, "flops_score_all", r_op1=0.1, r_op2=0.3, r_path=0.25, seed=0)
print(f"removed {len(state.removed)} of {len(space.operations())} operations")
print(f"paths: {count_paths(space):,} -> {count_paths(pruned):,}")
print(f"per-bucket thresholds: {[round(t, 3) for t in state.thresholds]}")

draws = rejection_sample_many(pruned, model, buckets, state.thresholds, 500, np.random.default_rng(2))
tries = np.mean([d.tries for d in draws])
print(f"\n500 draws, {tries:.2f} candidates per accepted path, {sum(d.fallback for d in draws)} fallbacks")

uniform = [sample_uniform(space, rng) for _ in range(500)]
print(f"mean oracle loss, uniform over the full space: {np.mean([oracle.clean_loss(p) for p in uniform]):.4f}")
print(f"mean oracle loss, filtered draws:              {np.mean([oracle.clean_loss(d.path) for d in draws]):.4f}")
