"""Operation scoring, operation pruning, path thresholds and rejection sampling."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .flops import BucketSpec, bucket_of, extreme_path, make_buckets, operation_flops, total_flops
from .space import BlockChoice, Path, SearchSpace, sample_uniform

log = logging.getLogger(__name__)

STRATEGIES = ("flops_uniform", "flops_score_per_bucket", "flops_score_all")


@dataclass(frozen=True)
class OperationCandidate:
    block: int
    layer: int
    width: float
    expand: float
    flops: float
    score: float = float("nan")
    score_std: float = float("nan")

    def key(self) -> tuple[int, int, float, float]:
        return (self.block, self.layer, self.width, self.expand)


def candidates_for(space: SearchSpace) -> list[OperationCandidate]:
    """Every (block, layer, width, expand) still present in ``space``, unscored."""
    out = []
    for b, l, w, e in space.operations():
        if (b, l, w, e) in space.removed:
            continue
        out.append(OperationCandidate(b, l, w, e, operation_flops(space, b, l, w, e)))
    return out


# insertion and scoring ------------------------------------------------------

def insert_operation(space: SearchSpace, path: Path, cand: OperationCandidate,
                     rng: np.random.Generator) -> Path:
    """Force ``cand`` into ``path``.

    The block's width becomes the candidate's width; if the layer is inactive
    the smallest allowed depth that activates it is used. Expands that the new
    width does not allow, and newly activated layers, are redrawn uniformly.
    """
    b, l = cand.block, cand.layer
    blk = space.blocks[b]
    old = path.blocks[b]
    allowed = set(space.depth_width_options(b))
    depth = old.depth
    if l >= blk.layers_for_depth(depth) or (depth, cand.width) not in allowed:
        fits = [d for d in blk.depth_choices if blk.layers_for_depth(d) > l and (d, cand.width) in allowed]
        if not fits:
            raise ValueError(f"layer {l} of block {b} is unreachable at width {cand.width}")
        depth = fits[0]
    expands = []
    for i in range(blk.layers_for_depth(depth)):
        opts = space.allowed_expands(b, i, cand.width)
        if i == l:
            expands.append(cand.expand)
        elif i < len(old.expands) and old.expands[i] in opts:
            expands.append(old.expands[i])
        else:
            expands.append(opts[int(rng.integers(len(opts)))])
    blocks = list(path.blocks)
    blocks[b] = BlockChoice(depth, cand.width, tuple(expands))
    return Path(tuple(blocks))


def score_operation(scorer, space: SearchSpace, cand: OperationCandidate, n: int,
                    rng: np.random.Generator) -> float:
    """Mean score of ``n`` uniform paths with ``cand`` inserted."""
    paths = [insert_operation(space, sample_uniform(space, rng), cand, rng) for _ in range(n)]
    return float(np.mean(scorer(paths)))


def score_operations(scorer, space: SearchSpace, n: int, rng: np.random.Generator,
                     candidates=None) -> list[OperationCandidate]:
    """Score every candidate; all inserted paths go through the scorer in one batch."""
    candidates = candidates_for(space) if candidates is None else list(candidates)
    paths = []
    for cand in candidates:
        paths.extend(insert_operation(space, sample_uniform(space, rng), cand, rng) for _ in range(n))
    scores = np.asarray(scorer(paths), dtype=np.float64).reshape(len(candidates), n)
    return [OperationCandidate(c.block, c.layer, c.width, c.expand, c.flops,
                               float(s.mean()), float(s.std()))
            for c, s in zip(candidates, scores)]


# operation pruning ------------------------------------------------------------

def operation_buckets(candidates, num_buckets: int = 5) -> list[int]:
    """Equal-width buckets over the candidates' standalone FLOPs."""
    f = [c.flops for c in candidates]
    spec = BucketSpec.from_range(min(f), max(f), num_buckets)
    return [bucket_of(spec, x) for x in f]


def _removal_count(n: int, ratio: float) -> int:
    return int(math.floor(ratio * n + 0.5))


def _worst_first(cands):
    # lowest score first; on equal scores drop the more expensive one so the
    # cheaper candidate survives
    return sorted(cands, key=lambda c: (c.score, -c.flops, c.key()))


class _Guard:
    """Refuses removals that would empty a decision slot or shrink the bucket range.

    Every (block, layer, width) slot keeps at least one expand ratio. With
    ``buckets`` given, a removal is also refused when the cheapest or the most
    expensive remaining path would land in a different FLOPs bucket than it
    does in the unpruned space.
    """

    def __init__(self, candidates, space: SearchSpace | None = None, buckets: BucketSpec | None = None):
        self.alive: dict[tuple, int] = {}
        for c in candidates:
            self.alive[c.key()[:3]] = self.alive.get(c.key()[:3], 0) + 1
        self.space, self.buckets = space, buckets
        if buckets is not None:
            self.extremes = self._extreme_buckets(space)

    def _extreme_buckets(self, space: SearchSpace) -> tuple[int, int]:
        return tuple(bucket_of(self.buckets, total_flops(space, extreme_path(space, largest)))
                     for largest in (False, True))

    def try_remove(self, cand, removed) -> bool:
        slot = cand.key()[:3]
        if self.alive[slot] <= 1:
            log.info("kept last survivor of slot %s", slot)
            return False
        if self.buckets is not None:
            trial = self.space.without(list(removed) + [cand.key()])
            if self._extreme_buckets(trial) != self.extremes:
                log.info("kept %s to keep the FLOPs bucket range", cand.key())
                return False
        self.alive[slot] -= 1
        return True


def _remove_in_order(ordered, count, guard, removed):
    taken = 0
    for c in ordered:
        if taken >= count:
            break
        if c.key() in removed:
            continue
        if guard.try_remove(c, removed):
            removed.add(c.key())
            taken += 1
    return taken


def prune_operations(space: SearchSpace, candidates, strategy: str = "flops_score_all",
                     r_op: float = 0.3, r_op1: float = 0.1, r_op2: float = 0.3,
                     rng: np.random.Generator | None = None, num_op_buckets: int = 5,
                     path_buckets: BucketSpec | None = None):
    """Return ``(pruned_space, removed_keys)``.

    ``flops_uniform`` and ``flops_score_per_bucket`` remove ``r_op`` of each
    operation-FLOPs bucket (at random or by worst score). ``flops_score_all``
    removes the worst ``r_op1`` overall and then the worst ``r_op2`` of the
    survivors in each bucket.

    Passing ``path_buckets`` also protects the lowest and highest path bucket
    of the space from being pruned away.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    for name, r in (("r_op", r_op), ("r_op1", r_op1), ("r_op2", r_op2)):
        if not 0.0 <= r < 1.0:
            raise ValueError(f"{name}={r} outside [0, 1)")
    candidates = list(candidates)
    if strategy != "flops_uniform" and any(math.isnan(c.score) for c in candidates):
        raise ValueError("score-based strategies need scored candidates")
    rng = rng if rng is not None else np.random.default_rng(0)
    buckets = operation_buckets(candidates, num_op_buckets)
    groups = [[c for c, k in zip(candidates, buckets) if k == b] for b in range(num_op_buckets)]
    guard, removed = _Guard(candidates, space, path_buckets), set()

    if strategy == "flops_uniform":
        for g in groups:
            order = [g[i] for i in rng.permutation(len(g))]
            _remove_in_order(order, _removal_count(len(g), r_op), guard, removed)
    elif strategy == "flops_score_per_bucket":
        for g in groups:
            _remove_in_order(_worst_first(g), _removal_count(len(g), r_op), guard, removed)
    else:
        _remove_in_order(_worst_first(candidates), _removal_count(len(candidates), r_op1), guard, removed)
        for g in groups:
            alive = [c for c in g if c.key() not in removed]
            _remove_in_order(_worst_first(alive), _removal_count(len(alive), r_op2), guard, removed)

    keys = sorted(removed)
    return space.without(keys), keys


# path thresholds and rejection sampling ---------------------------------------

@dataclass
class BucketSample:
    paths: list
    buckets: list
    draws: int
    short: dict = field(default_factory=dict)


def sample_per_bucket(space: SearchSpace, buckets: BucketSpec, m: int, rng: np.random.Generator,
                      max_draws: int = 50_000) -> BucketSample:
    """Uniform draws kept only while their bucket still needs entries.

    Stops once every bucket holds ``m`` paths or after ``max_draws`` draws;
    buckets left short are listed in ``short`` (bucket -> count found).
    """
    counts = [0] * buckets.num_buckets
    paths, labels, draws = [], [], 0
    while draws < max_draws and min(counts) < m:
        p = sample_uniform(space, rng)
        draws += 1
        k = bucket_of(buckets, total_flops(space, p))
        if counts[k] < m:
            counts[k] += 1
            paths.append(p)
            labels.append(k)
    short = {k: c for k, c in enumerate(counts) if c < m}
    if short:
        log.warning("sparse buckets after %d draws: %s", draws, short)
    return BucketSample(paths, labels, draws, short)


def path_thresholds(scorer, space: SearchSpace, buckets: BucketSpec, r_path: float, m: int,
                    rng: np.random.Generator, max_draws: int = 50_000) -> list[float]:
    """Per-bucket ``r_path`` quantile (linear interpolation) of scores of ``m`` sampled paths.

    Buckets with no sampled path get threshold 0, which never rejects.
    """
    if not 0.0 <= r_path < 1.0:
        raise ValueError("r_path must lie in [0, 1)")
    sample = sample_per_bucket(space, buckets, m, rng, max_draws)
    scores = np.asarray(scorer(sample.paths), dtype=np.float64) if sample.paths else np.zeros(0)
    labels = np.array(sample.buckets, dtype=np.int64)
    out = []
    for k in range(buckets.num_buckets):
        s = scores[labels == k]
        if len(s) == 0:
            log.warning("bucket %d unreachable after pruning; threshold set to 0", k)
            out.append(0.0)
        else:
            out.append(float(np.quantile(s, r_path, method="linear")))
    return out


@dataclass(frozen=True)
class Draw:
    path: Path
    score: float
    bucket: int
    tries: int
    fallback: bool


def rejection_sample_many(space: SearchSpace, scorer, buckets: BucketSpec, thresholds, count: int,
                          rng: np.random.Generator, max_tries: int = 100, chunk: int = 64) -> list[Draw]:
    """``count`` sequential rejection draws.

    Candidates are drawn and scored ``chunk`` at a time but consumed strictly
    in order, so the result equals drawing and scoring one path at a time.
    After ``max_tries`` failed draws the best draw seen is returned and flagged
    as a fallback.
    """
    if max_tries < 1:
        raise ValueError("max_tries must be at least 1")
    out: list[Draw] = []
    buf: list = []
    tries, best = 0, None
    while len(out) < count:
        if not buf:
            paths = [sample_uniform(space, rng) for _ in range(chunk)]
            scores = np.asarray(scorer(paths), dtype=np.float64)
            buf = list(zip(paths, scores))[::-1]
        p, s = buf.pop()
        k = bucket_of(buckets, total_flops(space, p))
        tries += 1
        if best is None or s > best[1]:
            best = (p, float(s), k)
        if s >= thresholds[k]:
            out.append(Draw(p, float(s), k, tries, False))
            tries, best = 0, None
        elif tries >= max_tries:
            log.info("rejection sampling fell back after %d tries", tries)
            out.append(Draw(best[0], best[1], best[2], tries, True))
            tries, best = 0, None
    return out


def rejection_sample(space: SearchSpace, scorer, buckets: BucketSpec, thresholds,
                     rng: np.random.Generator, max_tries: int = 100, chunk: int = 8) -> Draw:
    return rejection_sample_many(space, scorer, buckets, thresholds, 1, rng, max_tries, chunk)[0]


# state ------------------------------------------------------------------------

@dataclass
class PruneState:
    strategy: str
    ratios: dict
    removed: list
    thresholds: list
    seed: int
    operation_scores: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["removed"] = [[b, l, repr(float(w)), repr(float(e))] for b, l, w, e in self.removed]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "PruneState":
        removed = [(int(b), int(l), float(w), float(e)) for b, l, w, e in d["removed"]]
        return cls(d["strategy"], dict(d["ratios"]), removed, [float(x) for x in d["thresholds"]],
                   int(d["seed"]), list(d.get("operation_scores", [])))

    def apply(self, space: SearchSpace) -> SearchSpace:
        return space.base().without(self.removed)


def prune(scorer, space: SearchSpace, buckets: BucketSpec | None = None, strategy: str = "flops_score_all",
          r_op: float = 0.3, r_op1: float = 0.1, r_op2: float = 0.3, r_path: float = 0.25,
          n: int = 32, m: int = 50, seed: int = 0, rng: np.random.Generator | None = None):
    """Score operations, prune them, then compute path thresholds on the pruned space."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    buckets = buckets or make_buckets(space, 5)
    cands = candidates_for(space)
    if strategy != "flops_uniform":
        cands = score_operations(scorer, space, n, rng, cands)
    pruned, removed = prune_operations(space, cands, strategy, r_op, r_op1, r_op2, rng, path_buckets=buckets)
    deltas = path_thresholds(scorer, pruned, buckets, r_path, m, rng) if r_path > 0 else [0.0] * buckets.num_buckets
    scores = [[c.block, c.layer, repr(c.width), repr(c.expand), c.flops,
               None if math.isnan(c.score) else c.score, None if math.isnan(c.score_std) else c.score_std]
              for c in cands]
    state = PruneState(strategy, {"r_op": r_op, "r_op1": r_op1, "r_op2": r_op2, "r_path": r_path, "n": n, "m": m},
                       removed, deltas, seed, scores)
    return pruned, state
