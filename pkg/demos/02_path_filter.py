"""Train a path filter to rank paths within a FLOPs bucket.

The synthetic oracle stands in for measured validation losses. The filter is
a small transformer over per-layer tokens. It is trained only on pairs of
paths from the same bucket, and it is judged on how well it finds the weakest
paths of each bucket in held-out data.
"""

import numpy as np

from pathprune import (
    PathFilter, ScoredPath, SyntheticOracle, TrainConfig, make_buckets, pair_accuracy, sample_uniform,
    toy_space, train, weak_detection_metrics,
)

space = toy_space()
buckets = make_buckets(space, 5)
oracle = SyntheticOracle(space)
rng = np.random.default_rng(0)


def dataset(n):
    paths = [sample_uniform(space, rng) for _ in range(n)]
    return [ScoredPath.make(space, buckets, p, oracle(p)) for p in paths]


train_set, held_out = dataset(1000), dataset(500)
model = PathFilter(space, buckets, seed=0)
print(f"filter parameters: {model.num_parameters():,}")
print(f"untrained pair accuracy: {pair_accuracy(model, held_out):.3f}")

model, history = train(model, train_set, TrainConfig(epochs=20, patience=10))
print(f"trained for {len(history.train_loss)} epochs, best validation pair loss {min(history.val_loss):.4f}")
print(f"held-out pair accuracy: {pair_accuracy(model, held_out):.3f}")

for ratio in (0.2, 0.3, 0.4):
    m = weak_detection_metrics(model, held_out, ratio)
    print(f"weakest {ratio:.0%} per bucket: precision {m['precision']:.3f}")
