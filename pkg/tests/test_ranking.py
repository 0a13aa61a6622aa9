import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathprune.filter import FilterConfig, PathFilter
from pathprune.oracle import OracleConfig, SyntheticOracle
from pathprune.ranking import (
    ScoredPath, TrainConfig, build_pairs, check_dataset, clip_by_global_norm, pair_accuracy, pair_loss,
    read_dataset, stratified_split, train, weak_detection_metrics, write_dataset,
)
from pathprune.space import sample_uniform

TINY = FilterConfig(dim=16, heads=2, layers=1, ff_dim=16, head_dim=16)


def fake_records(bucket_sizes, seed=0):
    """Records whose paths are irrelevant: only bucket and loss matter for pair logic."""
    rng = np.random.default_rng(seed)
    out = []
    for k, n in enumerate(bucket_sizes):
        out += [ScoredPath(None, 0.0, k, float(x)) for x in rng.permutation(n) + 100 * k]
    return out


class LookupScorer:
    def __init__(self, records, sign=-1.0):
        self.table = {id(r.path): sign * r.target_loss for r in records}

    def __call__(self, paths):
        return np.array([self.table[id(p)] for p in paths])


def scored(space, buckets, n, seed=0, noise=0.002):
    orc = SyntheticOracle(space, OracleConfig(seed=seed, noise_std=noise))
    rng = np.random.default_rng(seed + 1)
    return [ScoredPath.make(space, buckets, p, orc(p)) for p in (sample_uniform(space, rng) for _ in range(n))]


def test_pair_loss_values():
    assert pair_loss(0.5, 0.5, 1) == 1.0
    assert pair_loss(0.9, -0.1, 1) == 0.0
    assert pair_loss(0.2, 0.7, 1) == 2.25
    assert pair_loss(0.7, 0.2, -1) == 2.25
    assert np.allclose(pair_loss(np.array([0.5, 0.9]), np.array([0.5, -0.1]), np.array([1, 1])), [1.0, 0.0])


def test_build_pairs_counts_and_orientation():
    recs = fake_records([4, 3, 1])
    pairs = build_pairs(recs)
    assert len(pairs) == 6 + 3
    for a, b, s in zip(pairs.a, pairs.b, pairs.s):
        assert recs[a].bucket == recs[b].bucket and a < b
        assert s == (1.0 if recs[a].target_loss < recs[b].target_loss else -1.0)


def test_ties_are_skipped():
    recs = [ScoredPath(None, 0.0, 0, 1.0), ScoredPath(None, 0.0, 0, 1.0), ScoredPath(None, 0.0, 0, 2.0)]
    assert len(build_pairs(recs)) == 2


def test_unbounded_pairs_and_caps():
    recs = fake_records([5, 5])
    assert len(build_pairs(recs, flops_bounded=False)) == 45
    assert len(build_pairs(recs, max_pairs_per_bucket=3)) == 6
    assert len(build_pairs(recs, max_pairs_per_bucket=3, flops_bounded=False)) == 6
    full = build_pairs(recs)
    capped = build_pairs(recs, max_pairs_per_bucket=3, rng=np.random.default_rng(1))
    assert set(zip(capped.a, capped.b)) <= set(zip(full.a, full.b))


def test_single_record_bucket_warns(caplog):
    recs = fake_records([3, 1])
    caplog.set_level(logging.WARNING, logger="pathprune")
    assert len(build_pairs(recs)) == 3
    assert "no pairs" in caplog.text


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 12), min_size=1, max_size=6))
def test_pair_count_formula(sizes):
    recs = fake_records(sizes)
    assert len(build_pairs(recs)) == sum(n * (n - 1) // 2 for n in sizes)


def test_stratified_split_keeps_every_bucket():
    recs = fake_records([10, 2, 1, 5])
    tr, va = stratified_split(recs, 0.2, np.random.default_rng(0))
    assert sorted(tr.tolist() + va.tolist()) == list(range(len(recs)))
    vb = {recs[i].bucket for i in va}
    assert vb == {0, 1, 3}
    assert sum(recs[i].bucket == 0 for i in va) == 2


def test_dataset_round_trip(tmp_path, space, buckets):
    recs = scored(space, buckets, 20)
    write_dataset(tmp_path / "d.jsonl", recs)
    back = read_dataset(tmp_path / "d.jsonl")
    assert back == recs
    check_dataset(space, buckets, back)
    bad = [ScoredPath(recs[0].path, recs[0].flops, (recs[0].bucket + 1) % 5, 0.0)]
    with pytest.raises(ValueError, match="stored bucket"):
        check_dataset(space, buckets, bad)


def test_pair_accuracy_perfect_and_reversed():
    recs = [ScoredPath(object(), 0.0, k, float(x)) for k in range(3) for x in range(6)]
    assert pair_accuracy(LookupScorer(recs), recs) == 1.0
    assert pair_accuracy(LookupScorer(recs, +1.0), recs) == 0.0
    const = lambda paths: np.zeros(len(paths))  # noqa: E731
    assert pair_accuracy(const, recs) == 0.5


def test_weak_detection_by_hand():
    # one bucket, losses 0..9: weakest 30% are losses 7, 8, 9
    recs = [ScoredPath(object(), 0.0, 0, float(x)) for x in range(10)]
    perfect = weak_detection_metrics(LookupScorer(recs), recs, 0.3)
    assert (perfect["tp"], perfect["fp"], perfect["fn"], perfect["tn"]) == (3, 0, 0, 7)
    assert perfect["precision"] == perfect["recall"] == perfect["accuracy"] == 1.0
    # scores that flag losses 6, 8, 9 as the weakest
    scores = -np.array([0, 1, 2, 3, 4, 5, 8, 6.5, 9, 10], dtype=float)
    m = weak_detection_metrics(None, recs, 0.3, scores=scores)
    assert (m["tp"], m["fp"], m["fn"], m["tn"]) == (2, 1, 1, 6)
    assert m["precision"] == pytest.approx(2 / 3) and m["accuracy"] == pytest.approx(0.8)


def test_weak_detection_rounds_per_bucket():
    recs = [ScoredPath(object(), 0.0, k, float(x)) for k, n in ((0, 4), (1, 2)) for x in range(n)]
    m = weak_detection_metrics(LookupScorer(recs), recs, 0.25)
    assert m["tp"] + m["fn"] == 1 + 1  # round(1.0)=1 and round(0.5)=1 (half rounds up)


def test_clip_by_global_norm():
    g = [np.array([3.0]), np.array([4.0])]
    c = clip_by_global_norm(g, 1.0)
    assert np.allclose([c[0][0], c[1][0]], [0.6, 0.8])
    assert clip_by_global_norm(g, 10.0) is g


def test_training_improves_ranking_and_leaves_input_alone(space, buckets):
    recs = scored(space, buckets, 300)
    test = scored(space, buckets, 200, seed=5)
    model = PathFilter(space, buckets, TINY, seed=0)
    before = model.state_dict()
    acc0 = pair_accuracy(model, test)
    trained, hist = train(model, recs, TrainConfig(epochs=15, patience=15))
    assert all(np.array_equal(before[k], v.data) for k, v in model.params.items())
    assert pair_accuracy(trained, test) > max(acc0, 0.6)
    assert hist.val_loss[hist.best_epoch] == min(hist.val_loss)
    assert len(hist.train_loss) == len(hist.val_loss) <= 15


def test_training_is_deterministic(space, buckets):
    recs = scored(space, buckets, 80)
    a, _ = train(PathFilter(space, buckets, TINY), recs, TrainConfig(epochs=2))
    b, _ = train(PathFilter(space, buckets, TINY), recs, TrainConfig(epochs=2))
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)


def test_early_stopping(space, buckets):
    recs = scored(space, buckets, 80)
    _, hist = train(PathFilter(space, buckets, TINY), recs, TrainConfig(epochs=200, patience=2, lr=0.05))
    assert len(hist.val_loss) < 200
    assert len(hist.val_loss) - 1 - hist.best_epoch == 2


def test_training_input_errors(space, buckets):
    recs = scored(space, buckets, 5)
    with pytest.raises(ValueError):
        train(PathFilter(space, buckets, TINY), recs[:1])
    same = [ScoredPath(r.path, r.flops, r.bucket, 1.0) for r in recs]
    with pytest.raises(ValueError, match="no trainable pairs"):
        train(PathFilter(space, buckets, TINY), same)
