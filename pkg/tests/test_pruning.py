import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathprune.filter import ConstantScorer
from pathprune.flops import bucket_of, extreme_path, make_buckets, total_flops
from pathprune.oracle import SyntheticOracle
from pathprune.pruning import (
    OperationCandidate, PruneState, candidates_for, insert_operation, operation_buckets, path_thresholds,
    prune, prune_operations, rejection_sample, rejection_sample_many, sample_per_bucket, score_operations,
)
from pathprune.space import COMPOFA_RULE, apply_couple_rule, count_paths, sample_uniform, toy_space, validate_path

SPACE = toy_space()
ORACLE = SyntheticOracle(SPACE)


def oracle_scorer(paths):
    return np.array([-ORACLE(p) for p in paths])


def flops_scorer(paths):
    return np.array([total_flops(SPACE, p) for p in paths])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.data())
def test_insert_operation_places_the_operation(seed, data):
    rng = np.random.default_rng(seed)
    cands = candidates_for(SPACE)
    cand = cands[data.draw(st.integers(0, len(cands) - 1))]
    path = sample_uniform(SPACE, rng)
    new = insert_operation(SPACE, path, cand, rng)
    assert validate_path(SPACE, new)
    blk = new.blocks[cand.block]
    assert blk.width == cand.width and blk.expands[cand.layer] == cand.expand
    old = path.blocks[cand.block]
    if cand.layer < len(old.expands):
        assert blk.depth == old.depth
    else:
        # the shallowest depth that activates the layer
        assert blk.depth == cand.layer - 1
    assert all(new.blocks[b] == path.blocks[b] for b in range(4) if b != cand.block)


def test_insert_unreachable_layer_raises():
    coupled = apply_couple_rule(SPACE, COMPOFA_RULE)
    path = sample_uniform(coupled, np.random.default_rng(0))
    cand = OperationCandidate(0, 3, 0.65, 0.2, 0.0)  # width .65 only allows depth 0 (two layers)
    with pytest.raises(ValueError, match="unreachable"):
        insert_operation(coupled, path, cand, np.random.default_rng(0))


def test_insert_respects_removed_expands():
    pruned = SPACE.without([(1, l, 0.8, 0.35) for l in range(4)])
    rng = np.random.default_rng(3)
    for _ in range(50):
        new = insert_operation(pruned, sample_uniform(pruned, rng), OperationCandidate(1, 2, 0.8, 0.2, 0.0), rng)
        assert validate_path(pruned, new)


def test_candidates_and_operation_buckets():
    cands = candidates_for(SPACE)
    assert len(cands) == 4 * 4 * 3 * 3
    assert len(candidates_for(SPACE.without([cands[0].key()]))) == len(cands) - 1
    ob = operation_buckets(cands)
    cheapest = min(range(len(cands)), key=lambda i: cands[i].flops)
    dearest = max(range(len(cands)), key=lambda i: cands[i].flops)
    assert ob[cheapest] == 0 and ob[dearest] == 4


def test_score_operations_constant_scorer():
    scored = score_operations(ConstantScorer(0.4), SPACE, 5, np.random.default_rng(0))
    assert all(c.score == 0.4 and c.score_std == 0.0 for c in scored)


def test_score_operations_prefers_capacity():
    scored = {c.key(): c.score for c in score_operations(oracle_scorer, SPACE, 32, np.random.default_rng(0))}
    big = [scored[(b, 0, 1.0, 0.35)] for b in range(4)]
    small = [scored[(b, 0, 0.65, 0.2)] for b in range(4)]
    assert all(x > y for x, y in zip(big, small))


def _scored_candidates(seed=0):
    """Candidates with arbitrary distinct scores (so the expected removal set is easy to derive)."""
    rng = np.random.default_rng(seed)
    cands = candidates_for(SPACE)
    s = rng.permutation(len(cands)) / len(cands)
    return [OperationCandidate(c.block, c.layer, c.width, c.expand, c.flops, float(x)) for c, x in zip(cands, s)]


def _survivor_slots_ok(space):
    return all(space.allowed_expands(b, l, w) for b, blk in enumerate(space.blocks)
               for l in range(blk.max_layers) for w in blk.width_choices)


def test_flops_score_all_counts_and_order():
    cands = _scored_candidates()
    pruned, removed = prune_operations(SPACE, cands, "flops_score_all", r_op1=0.1, r_op2=0.3)
    removed = set(removed)
    # stage one: the 14 globally worst (round(0.1 * 144)) unless guarded
    worst = sorted(cands, key=lambda c: c.score)[:14]
    assert all(c.key() in removed for c in worst)
    # stage two: round(0.3 * survivors) per operation-FLOPs bucket
    ob = operation_buckets(cands)
    expected = 14
    for k in range(5):
        alive = [c for c, b in zip(cands, ob) if b == k and c.key() not in {w.key() for w in worst}]
        expected += math.floor(0.3 * len(alive) + 0.5)
    assert len(removed) == expected
    assert _survivor_slots_ok(pruned)
    assert count_paths(pruned) < count_paths(SPACE)


def test_per_bucket_strategies_remove_per_bucket_quota():
    cands = _scored_candidates(1)
    ob = operation_buckets(cands)
    quota = [math.floor(0.3 * sum(b == k for b in ob) + 0.5) for k in range(5)]
    for strategy in ("flops_uniform", "flops_score_per_bucket"):
        _, removed = prune_operations(SPACE, cands, strategy, r_op=0.3, rng=np.random.default_rng(0))
        per = [sum(1 for c, b in zip(cands, ob) if b == k and c.key() in set(removed)) for k in range(5)]
        assert per == quota, strategy
    _, removed = prune_operations(SPACE, cands, "flops_score_per_bucket", r_op=0.3)
    # worst first, but the last expand left in a (block, layer, width) slot is never taken
    alive = {}
    for c in cands:
        alive[c.key()[:3]] = alive.get(c.key()[:3], 0) + 1
    expected = set()
    for k in range(5):
        group = sorted((c for c, b in zip(cands, ob) if b == k), key=lambda c: c.score)
        taken = 0
        for c in group:
            if taken == quota[k]:
                break
            if alive[c.key()[:3]] > 1:
                alive[c.key()[:3]] -= 1
                expected.add(c.key())
                taken += 1
    assert set(removed) == expected


def test_guard_keeps_every_slot_alive():
    pruned, removed = prune_operations(SPACE, _scored_candidates(2), "flops_score_all", r_op1=0.9, r_op2=0.9)
    assert _survivor_slots_ok(pruned)
    assert len(removed) == 144 - 48  # one survivor per (block, layer, width)
    assert count_paths(pruned) == 9 ** 4  # one path per (depth, width) in each block


def test_prune_operations_validation():
    with pytest.raises(ValueError):
        prune_operations(SPACE, _scored_candidates(), "greedy")
    with pytest.raises(ValueError):
        prune_operations(SPACE, _scored_candidates(), r_op1=1.0)
    with pytest.raises(ValueError, match="scored"):
        prune_operations(SPACE, candidates_for(SPACE), "flops_score_all")


def test_sample_per_bucket_fills_buckets(buckets):
    s = sample_per_bucket(SPACE, buckets, 10, np.random.default_rng(0))
    assert not s.short
    assert sorted(set(s.buckets)) == [0, 1, 2, 3, 4] and len(s.paths) == 50
    sparse = sample_per_bucket(SPACE, buckets, 10, np.random.default_rng(0), max_draws=30)
    assert sparse.short and sparse.draws == 30


def test_path_thresholds_are_linear_quantiles(buckets):
    rng = np.random.default_rng(5)
    got = path_thresholds(flops_scorer, SPACE, buckets, 0.25, 9, rng)
    sample = sample_per_bucket(SPACE, buckets, 9, np.random.default_rng(5))
    for k in range(5):
        v = sorted(total_flops(SPACE, p) for p, b in zip(sample.paths, sample.buckets) if b == k)
        # linear interpolation at position 0.25 * (9 - 1) = 2 -> the third smallest value
        assert got[k] == pytest.approx(v[2], rel=1e-12)
    with pytest.raises(ValueError):
        path_thresholds(flops_scorer, SPACE, buckets, 1.0, 9, rng)


def test_rejection_never_returns_below_threshold(buckets):
    thresholds = path_thresholds(oracle_scorer, SPACE, buckets, 0.5, 20, np.random.default_rng(0))
    draws = rejection_sample_many(SPACE, oracle_scorer, buckets, thresholds, 300, np.random.default_rng(1))
    for d in draws:
        assert d.fallback or d.score >= thresholds[d.bucket]
        assert d.bucket == bucket_of(buckets, total_flops(SPACE, d.path))
    assert np.mean([d.tries for d in draws]) > 1.2


def test_rejection_chunking_does_not_change_results(buckets):
    thresholds = path_thresholds(oracle_scorer, SPACE, buckets, 0.4, 20, np.random.default_rng(0))
    a = rejection_sample_many(SPACE, oracle_scorer, buckets, thresholds, 40, np.random.default_rng(2), chunk=1)
    b = rejection_sample_many(SPACE, oracle_scorer, buckets, thresholds, 40, np.random.default_rng(2), chunk=64)
    assert a == b
    one = rejection_sample(SPACE, oracle_scorer, buckets, thresholds, np.random.default_rng(2))
    assert one == a[0]


def test_rejection_fallback_returns_best_seen(buckets):
    draws = rejection_sample_many(SPACE, flops_scorer, buckets, [1e9] * 5, 3, np.random.default_rng(0), max_tries=7)
    rng = np.random.default_rng(0)
    for d in draws:
        seen = [sample_uniform(SPACE, rng) for _ in range(7)]
        assert d.fallback and d.tries == 7
        assert d.score == max(flops_scorer(seen))
    with pytest.raises(ValueError):
        rejection_sample_many(SPACE, flops_scorer, buckets, [0.0] * 5, 1, np.random.default_rng(0), max_tries=0)


def test_prune_end_to_end_and_state_round_trip(buckets):
    pruned, state = prune(oracle_scorer, SPACE, buckets, "flops_score_all", r_op1=0.1, r_op2=0.3, r_path=0.25,
                          n=8, m=20, seed=0, rng=np.random.default_rng(0))
    assert state.removed and len(state.thresholds) == 5
    assert state.apply(SPACE) == pruned
    back = PruneState.from_dict(json.loads(state.to_json()))
    assert back.apply(SPACE) == pruned and back.thresholds == state.thresholds
    assert back.to_json() == state.to_json()
    lo_b = bucket_of(buckets, total_flops(SPACE, extreme_path(pruned, False)))
    hi_b = bucket_of(buckets, total_flops(SPACE, extreme_path(pruned, True)))
    assert (lo_b, hi_b) == (0, 4)


def test_prune_without_path_pruning_sets_zero_thresholds(buckets):
    _, state = prune(ConstantScorer(0.5), SPACE, buckets, "flops_uniform", r_op=0.2, r_path=0.0)
    assert state.thresholds == [0.0] * 5
    assert all(s[5] is None for s in state.operation_scores)


def test_bucket_range_guard(buckets):
    # the most expensive operations score worst, so unguarded pruning strips the top of the range
    cands = [OperationCandidate(c.block, c.layer, c.width, c.expand, c.flops, -c.flops) for c in candidates_for(SPACE)]

    def extremes(space):
        return [bucket_of(buckets, total_flops(SPACE, extreme_path(space, big))) for big in (False, True)]

    loose, _ = prune_operations(SPACE, cands, "flops_score_all", r_op1=0.3, r_op2=0.3)
    assert extremes(loose) != [0, 4]
    guarded, removed = prune_operations(SPACE, cands, "flops_score_all", r_op1=0.3, r_op2=0.3, path_buckets=buckets)
    assert extremes(guarded) == [0, 4]
    assert _survivor_slots_ok(guarded) and len(removed) > 0
