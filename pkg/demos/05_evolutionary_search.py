"""Search for the best path under a FLOPs budget.

Aging evolution uses the filter's score as its fitness and never lets a
child exceed the budget. On a space small enough to enumerate, its answer
can be checked against the exhaustive optimum. A sweep over budgets traces a
cost/quality front.
"""

import numpy as np

from pathprune import (
    EvoConfig, PathFilter, ScoredPath, SyntheticOracle, TrainConfig, brute_force_best, count_paths, evolve,
    flops_range, make_buckets, pareto_sweep, sample_uniform, toy_space, train,
)

space = toy_space(num_blocks=2, depths=(0, 1))
buckets = make_buckets(space, 5)
oracle = SyntheticOracle(space)
rng = np.random.default_rng(0)
records = [ScoredPath.make(space, buckets, p, oracle(p)) for p in (sample_uniform(space, rng) for _ in range(600))]
proxy, _ = train(PathFilter(space, buckets, seed=0), records, TrainConfig(epochs=15))
print(f"search space: {count_paths(space):,} paths")

lo, hi = flops_range(space)
for frac in (0.3, 0.6, 1.0):
    budget = lo + frac * (hi - lo)
    _, best = brute_force_best(proxy, space, budget)
    res = evolve(proxy, space, budget, EvoConfig(generations=500, seed=0))
    print(f"budget {budget:.6f}: evolution {res.score:.4f} (generation {res.generation_found}), "
          f"exhaustive {best:.4f}")

results, table = pareto_sweep(proxy, space, [lo + f * (hi - lo) for f in (0.2, 0.4, 0.6, 0.8, 1.0)],
                              EvoConfig(generations=200), oracle=oracle)
print("\n" + table)
