"""Tour of the search space and its cost model.

A path picks, for each of four blocks, a depth (2, 3 or 4 active layers), a
width ratio shared by the block, and an expand ratio for every active layer.
This script counts paths, shows what coupling does to the count, prices a few
paths in MFLOPs and sorts them into FLOPs buckets.
"""

import numpy as np

from pathprune import (
    COMPOFA_RULE, count_paths, flops_range, make_buckets, max_path, min_path, ofa_space, path_bucket,
    path_flops, sample_uniform, toy_space, total_flops, validate_path,
)

space = toy_space()
print(f"paths per block: {space.block_count(0)}")
print(f"paths in the toy space: {count_paths(space):,} (= {space.block_count(0)}^4)")
print(f"with depth and width coupled: {count_paths(space, COMPOFA_RULE):,}")

lo, hi = flops_range(space)
print(f"\ncost range: {lo:.6f} .. {hi:.6f} MFLOPs")
report = path_flops(space, max_path(space))
print(f"largest path, per block: {[round(x, 6) for x in report.per_block]}")

buckets = make_buckets(space, 5)
print(f"bucket edges: {[round(e, 6) for e in buckets.edges]}")

rng = np.random.default_rng(0)
print("\nfive random paths:")
for _ in range(5):
    p = sample_uniform(space, rng)
    assert validate_path(space, p)
    depths = [b.depth for b in p.blocks]
    print(f"  depths {depths}  {total_flops(space, p):.6f} MFLOPs  bucket {path_bucket(space, buckets, p)}")

# Removing an operation shrinks the space; paths that used it become invalid.
op = (0, 0, 1.0, 0.35)
smaller = space.without([op])
print(f"\nwithout {op}: {count_paths(smaller):,} paths")
print(f"the largest path is still valid there: {bool(validate_path(smaller, max_path(space)))}")
print(f"smallest path is untouched: {bool(validate_path(smaller, min_path(space)))}")

# The same cost model on image-sized geometry.
big = ofa_space()
print(f"\nconvolutional geometry: {flops_range(big)[0]:.1f} .. {flops_range(big)[1]:.1f} MFLOPs")
