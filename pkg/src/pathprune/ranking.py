"""Scored-path datasets, same-bucket pair construction and ranking training."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath

import numpy as np

from . import tensor as T
from .filter import PathFilter
from .flops import BucketSpec, bucket_of, total_flops
from .space import Path, SearchSpace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoredPath:
    path: Path
    flops: float
    bucket: int
    target_loss: float

    @classmethod
    def make(cls, space: SearchSpace, buckets: BucketSpec, path: Path, target_loss: float) -> "ScoredPath":
        f = total_flops(space, path)
        return cls(path, f, bucket_of(buckets, f), float(target_loss))

    def to_json(self) -> str:
        rec = {"path": self.path.to_dict(), "flops": self.flops, "bucket": self.bucket,
               "target_loss": self.target_loss}
        return json.dumps(rec, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ScoredPath":
        d = json.loads(line)
        return cls(Path.from_dict(d["path"]), float(d["flops"]), int(d["bucket"]), float(d["target_loss"]))


def write_dataset(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_dataset(path) -> list[ScoredPath]:
    text = FsPath(path).read_text(encoding="utf-8")
    return [ScoredPath.from_json(line) for line in text.splitlines() if line.strip()]


def check_dataset(space: SearchSpace, buckets: BucketSpec, records) -> None:
    """Raise if a stored bucket disagrees with the one recomputed from FLOPs."""
    for i, r in enumerate(records):
        b = bucket_of(buckets, total_flops(space, r.path))
        if b != r.bucket:
            raise ValueError(f"record {i}: stored bucket {r.bucket} but FLOPs give {b}")


# pairs ----------------------------------------------------------------------

@dataclass
class PairBatch:
    """Index pairs into a dataset; ``s = +1`` means the first path has the lower loss."""

    a: np.ndarray
    b: np.ndarray
    s: np.ndarray

    def __len__(self) -> int:
        return len(self.s)

    @classmethod
    def empty(cls) -> "PairBatch":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), np.zeros(0))


def pair_loss(g_a, g_b, s):
    """Squared hinge ``max(0, 1 - s (g_a - g_b))**2``; works on scalars and arrays."""
    m = np.maximum(0.0, 1.0 - np.asarray(s) * (np.asarray(g_a) - np.asarray(g_b)))
    out = m * m
    return float(out) if out.ndim == 0 else out


def _pairs_of(idx: np.ndarray, losses: np.ndarray):
    i, j = np.triu_indices(len(idx), k=1)
    a, b = idx[i], idx[j]
    la, lb = losses[a], losses[b]
    keep = la != lb
    a, b = a[keep], b[keep]
    s = np.where(la[keep] < lb[keep], 1.0, -1.0)
    return a, b, s


def _subsample(a, b, s, cap, rng):
    if cap is None or len(s) <= cap:
        return a, b, s
    pick = np.sort(rng.choice(len(s), size=cap, replace=False))
    return a[pick], b[pick], s[pick]


def build_pairs(records, max_pairs_per_bucket: int | None = None,
                rng: np.random.Generator | None = None, flops_bounded: bool = True) -> PairBatch:
    """All labelled pairs ``(i, j)`` with ``i < j`` in dataset order.

    With ``flops_bounded`` (the default) only pairs inside one FLOPs bucket are
    formed; otherwise every pair of the dataset is eligible and the cap scales
    with the number of buckets present. Exact loss ties are skipped.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    records = list(records)
    losses = np.array([r.target_loss for r in records])
    buckets = np.array([r.bucket for r in records], dtype=np.int64)
    if not flops_bounded:
        nb = len(set(buckets.tolist()))
        cap = None if max_pairs_per_bucket is None else max_pairs_per_bucket * nb
        a, b, s = _subsample(*_pairs_of(np.arange(len(records)), losses), cap, rng)
        return PairBatch(a, b, s)
    parts = []
    for k in sorted(set(buckets.tolist())):
        idx = np.flatnonzero(buckets == k)
        if len(idx) < 2:
            log.warning("bucket %d has %d record(s); no pairs", k, len(idx))
            continue
        parts.append(_subsample(*_pairs_of(idx, losses), max_pairs_per_bucket, rng))
    if not parts:
        return PairBatch.empty()
    return PairBatch(*(np.concatenate(x) for x in zip(*parts)))


def stratified_split(records, val_fraction: float, rng: np.random.Generator):
    """Per-bucket shuffle then split; returns (train, val) index arrays in sorted order."""
    buckets = np.array([r.bucket for r in records], dtype=np.int64)
    train, val = [], []
    for k in sorted(set(buckets.tolist())):
        idx = rng.permutation(np.flatnonzero(buckets == k))
        n_val = int(math.floor(len(idx) * val_fraction + 0.5))
        if len(idx) >= 2:
            n_val = min(max(n_val, 1), len(idx) - 1)
        else:
            n_val = 0
        val.extend(idx[:n_val].tolist())
        train.extend(idx[n_val:].tolist())
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(val), dtype=np.int64)


# training -------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    patience: int = 20
    batch_pairs: int = 256
    paths_per_step: int = 64
    lr: float = 3e-4
    clip_norm: float | None = 1.0
    val_fraction: float = 0.2
    flops_bounded: bool = True
    max_pairs_per_bucket: int | None = None
    seed: int = 0


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self) -> dict:
        return asdict(self)


def _subset(records, idx):
    return [records[i] for i in idx]


def _loss_tensor(model: PathFilter, tokens, buckets, a, b, s) -> T.Tensor:
    """Mean pair loss for pairs over the rows of ``tokens``."""
    g = model.forward(tokens, buckets)
    ga, gb = T.getitem(g, a), T.getitem(g, b)
    margin = T.relu(1.0 - (ga - gb) * s.astype(model.dtype))
    return T.mean(T.square(margin))


def _epoch_steps(records, train_idx, cfg: TrainConfig, rng):
    """Yield (row indices, a, b, s) for one epoch: random path subsets, pairs within each."""
    buckets = np.array([records[i].bucket for i in train_idx])
    losses = np.array([records[i].target_loss for i in train_idx])
    order = rng.permutation(len(train_idx))
    for start in range(0, len(order), cfg.paths_per_step):
        rows = np.sort(order[start:start + cfg.paths_per_step])
        i, j = np.triu_indices(len(rows), k=1)
        la, lb = losses[rows[i]], losses[rows[j]]
        keep = la != lb
        if cfg.flops_bounded:
            keep &= buckets[rows[i]] == buckets[rows[j]]
        i, j = i[keep], j[keep]
        if not len(i):
            continue
        s = np.where(la[keep] < lb[keep], 1.0, -1.0)
        if len(i) > cfg.batch_pairs:
            pick = np.sort(rng.choice(len(i), size=cfg.batch_pairs, replace=False))
            i, j, s = i[pick], j[pick], s[pick]
        yield train_idx[rows], i, j, s


def clip_by_global_norm(grads, max_norm: float):
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return [g * np.asarray(scale, dtype=g.dtype) for g in grads]


def validation_loss(model: PathFilter, records, pairs: PairBatch, scores=None) -> float:
    if not len(pairs):
        return float("nan")
    if scores is None:
        scores = score_records(model, records)
    return float(np.mean(pair_loss(scores[pairs.a], scores[pairs.b], pairs.s)))


def score_records(model, records) -> np.ndarray:
    records = list(records)
    if isinstance(model, PathFilter):
        tokens, _ = model.encode([r.path for r in records])
        return model.score_tokens(tokens, np.array([r.bucket for r in records], dtype=np.int64))
    return np.asarray(model([r.path for r in records]), dtype=np.float64)


def train(model: PathFilter, records, cfg: TrainConfig = TrainConfig()) -> tuple[PathFilter, TrainHistory]:
    """Train on ``records`` and return the snapshot with the lowest validation pair loss.

    The input model is left untouched. Each optimiser step takes a random
    subset of ``paths_per_step`` training paths, forms the eligible pairs among
    them and keeps at most ``batch_pairs`` of those.
    """
    records = list(records)
    if len(records) < 2:
        raise ValueError("need at least two scored paths to train")
    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = stratified_split(records, cfg.val_fraction, rng)
    val = _subset(records, val_idx)
    val_pairs = build_pairs(val, flops_bounded=True)
    check = build_pairs(_subset(records, train_idx), flops_bounded=cfg.flops_bounded)
    if not len(check):
        raise ValueError("no trainable pairs in the dataset")

    model = model.copy()
    params = model.parameters()
    state = T.AdamState(lr=cfg.lr)
    tokens_all, _ = model.encode([r.path for r in records])
    buckets_all = np.array([r.bucket for r in records], dtype=np.int64)
    val_tokens, val_buckets = tokens_all[val_idx], buckets_all[val_idx]

    hist = TrainHistory()
    best, best_loss, stale = model.state_dict(), math.inf, 0
    for epoch in range(cfg.epochs):
        losses = []
        for rows, a, b, s in _epoch_steps(records, train_idx, cfg, rng):
            T.zero_grad(params)
            loss = _loss_tensor(model, tokens_all[rows], buckets_all[rows], a, b, s)
            T.backward(loss)
            grads = [T.grad_or_zeros(p) for p in params]
            if cfg.clip_norm is not None:
                grads = clip_by_global_norm(grads, cfg.clip_norm)
            T.adam_step(params, grads, state)
            losses.append(loss.item())
        hist.train_loss.append(float(np.mean(losses)) if losses else float("nan"))
        if len(val_pairs):
            vs = model.score_tokens(val_tokens, val_buckets)
            vl = validation_loss(model, val, val_pairs, vs)
            va = _pair_accuracy_from_scores(vs, val_pairs)
        else:
            vl, va = hist.train_loss[-1], float("nan")
        hist.val_loss.append(vl)
        hist.val_accuracy.append(va)
        if vl < best_loss:
            best, best_loss, stale, hist.best_epoch = model.state_dict(), vl, 0, epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best)
    return model, hist


def pretrain_finetune(model: PathFilter, source, target, pre_cfg: TrainConfig, fine_cfg: TrainConfig):
    pre, h1 = train(model, source, pre_cfg)
    fine, h2 = train(pre, target, fine_cfg)
    return fine, (h1, h2)


# evaluation -----------------------------------------------------------------

def _pair_accuracy_from_scores(scores: np.ndarray, pairs: PairBatch) -> float:
    if not len(pairs):
        return float("nan")
    d = (scores[pairs.a] - scores[pairs.b]) * pairs.s
    return float(np.mean(np.where(d > 0, 1.0, np.where(d == 0, 0.5, 0.0))))


def pair_accuracy(model, records) -> float:
    """Fraction of same-bucket pairs ordered correctly (ties count one half)."""
    records = list(records)
    return _pair_accuracy_from_scores(score_records(model, records), build_pairs(records))


auc = pair_accuracy


def weak_detection_metrics(model, records, ratio: float, scores=None) -> dict:
    """Detect the weakest ``ratio`` of paths within each FLOPs bucket.

    The true weak set holds the ``round(ratio * n)`` highest-loss paths of a
    bucket; the predicted set the same number of lowest-scoring paths.
    """
    records = list(records)
    if scores is None:
        scores = score_records(model, records)
    losses = np.array([r.target_loss for r in records])
    buckets = np.array([r.bucket for r in records])
    truth = np.zeros(len(records), bool)
    pred = np.zeros(len(records), bool)
    for k in sorted(set(buckets.tolist())):
        idx = np.flatnonzero(buckets == k)
        n_weak = int(math.floor(ratio * len(idx) + 0.5))
        if n_weak == 0:
            continue
        by_loss = idx[np.lexsort((idx, -losses[idx]))]
        by_score = idx[np.lexsort((idx, scores[idx]))]
        truth[by_loss[:n_weak]] = True
        pred[by_score[:n_weak]] = True
    tp = int(np.sum(truth & pred))
    fp = int(np.sum(~truth & pred))
    fn = int(np.sum(truth & ~pred))
    tn = int(np.sum(~truth & ~pred))
    n = len(records)
    return {
        "ratio": ratio,
        "accuracy": (tp + tn) / n if n else float("nan"),
        "precision": tp / (tp + fp) if tp + fp else float("nan"),
        "recall": tp / (tp + fn) if tp + fn else float("nan"),
        "tp": tp, "fp": fp, "fn": fn, "tn": tn,
    }
