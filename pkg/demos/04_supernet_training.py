"""Train a weight-sharing supernet with and without path filtering.

This runs the whole loop on a small configuration so it finishes in seconds:
a warm-up epoch over uniform paths, a filter fitted on the warm-up supernet's
losses, pruning, then filtered training. Two baselines train the same
supernet on uniform paths and on depth/width-coupled paths. Each method is
scored on paths drawn from the space it trained on: the pruned run draws from
its pruned space, keeping only paths above the filter's thresholds, and the
baselines draw uniformly from theirs.
"""

from pathlib import Path

from pathprune import baseline_coupled, baseline_uniform, load_config, run_algorithm1

cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "smoke.json")
results = {"pruned": run_algorithm1(cfg), "uniform": baseline_uniform(cfg), "coupled": baseline_coupled(cfg)}

print(f"operations removed by the filter: {len(results['pruned'].prune_state.removed)}")
print("\nmean validation loss of held-out paths per FLOPs bucket")
print("bucket  " + "  ".join(f"{m:>8}" for m in results))
for k in range(cfg.num_buckets):
    row = [results[m].evaluation[k]["mean_loss"] for m in results]
    print(f"{k:>6}  " + "  ".join(f"{x:8.4f}" for x in row))

again = run_algorithm1(cfg)
print(f"\nrerun reproduces the evaluation exactly: {again.evaluation == results['pruned'].evaluation}")
