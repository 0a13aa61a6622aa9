"""End-to-end training with search-space pruning, and the uniform baselines.

Stages, in order: warm-up of the supernet with uniform sampling; sampling
``m`` validated paths per FLOPs bucket; pretraining the filter on the
synthetic oracle and fine-tuning it on the sampled paths; operation pruning;
per-bucket path thresholds; the main loop, which draws paths by rejection
sampling against the thresholds. Each stage draws from its own random stream
derived from the master seed, so enabling or disabling one stage never shifts
another stage's randomness.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path as FsPath

import numpy as np

from .config import ExperimentConfig, canonical_json, sha256_file
from .filter import PathFilter
from .flops import BucketSpec, bucket_of, make_buckets, total_flops
from .oracle import SyntheticOracle
from .pruning import PruneState, prune, rejection_sample_many
from .ranking import ScoredPath, TrainConfig, train, write_dataset
from .space import COMPOFA_RULE, CoupleRule, SearchSpace, apply_couple_rule, sample_uniform
from .supernet import ToySupernet, make_task

log = logging.getLogger(__name__)


@dataclass
class TrainRunLog:
    """Append-only record of sampled paths and losses per epoch.

    Wall-clock times are kept apart from the entries so that serialising the
    entries is byte-identical across repeated runs.
    """

    entries: list = field(default_factory=list)
    wall_time: dict = field(default_factory=dict)

    def append(self, stage: str, epoch: int, paths, losses, fallbacks: int = 0) -> None:
        self.entries.append({
            "stage": stage, "epoch": epoch,
            "paths": [p.to_json() for p in paths],
            "losses": [float(x) for x in losses],
            "fallbacks": int(fallbacks),
        })

    def paths(self, stage: str | None = None) -> list[str]:
        return [p for e in self.entries if stage is None or e["stage"] == stage for p in e["paths"]]

    def to_jsonl(self) -> str:
        return "".join(canonical_json(e) + "\n" for e in self.entries)


@dataclass
class RunResult:
    method: str
    space: SearchSpace
    buckets: BucketSpec
    log: TrainRunLog
    net: ToySupernet | None = None
    filter: PathFilter | None = None
    prune_state: PruneState | None = None
    finetune_data: list = field(default_factory=list)
    evaluation: list = field(default_factory=list)


# data -------------------------------------------------------------------------

def sample_scored_dataset(source, space: SearchSpace, buckets: BucketSpec, m_per_bucket: int,
                          rng: np.random.Generator, max_draws: int = 50_000,
                          eval_space: SearchSpace | None = None) -> list[ScoredPath]:
    """``m_per_bucket`` uniform paths per FLOPs bucket, each scored by ``source(path)``.

    Draws are kept only while their bucket is short; sparse buckets are capped
    by ``max_draws`` and reported in the log. Records come out grouped by
    bucket, in draw order within a bucket.
    """
    base = eval_space or space.base()
    kept: list[list] = [[] for _ in range(buckets.num_buckets)]
    draws = 0
    while draws < max_draws and min(len(k) for k in kept) < m_per_bucket:
        p = sample_uniform(space, rng)
        draws += 1
        f = total_flops(base, p)
        k = bucket_of(buckets, f)
        if len(kept[k]) < m_per_bucket:
            kept[k].append((p, f, k))
    short = {k: len(v) for k, v in enumerate(kept) if len(v) < m_per_bucket}
    if short:
        log.warning("sparse buckets after %d draws: %s", draws, short)
    return [ScoredPath(p, f, k, float(source(p))) for group in kept for p, f, k in group]


def uniform_dataset(source, space: SearchSpace, buckets: BucketSpec, n: int,
                    rng: np.random.Generator) -> list[ScoredPath]:
    return [ScoredPath.make(space, buckets, p, source(p)) for p in (sample_uniform(space, rng) for _ in range(n))]


def sample_test_paths(space: SearchSpace, buckets: BucketSpec, m_per_bucket: int, rng: np.random.Generator,
               scorer=None, thresholds=None, max_draws: int = 50_000) -> list[list]:
    """Up to ``m_per_bucket`` uniform paths per bucket.

    With ``thresholds`` a draw is kept only if its score clears its bucket's
    threshold; scores are computed only for draws whose bucket is still short.
    """
    kept: list[list] = [[] for _ in range(buckets.num_buckets)]
    draws = 0
    while draws < max_draws and min(len(k) for k in kept) < m_per_bucket:
        p = sample_uniform(space, rng)
        draws += 1
        k = bucket_of(buckets, total_flops(space, p))
        if len(kept[k]) >= m_per_bucket:
            continue
        if thresholds is not None and thresholds[k] > 0 and float(scorer([p])[0]) < thresholds[k]:
            continue
        kept[k].append(p)
    return kept


# filter -----------------------------------------------------------------------

def train_filter(cfg: ExperimentConfig, space: SearchSpace, buckets: BucketSpec, target,
                 oracle: SyntheticOracle) -> tuple[PathFilter, dict]:
    """Pretrain on the synthetic oracle (if configured), then fine-tune on ``target``."""
    model = PathFilter(space, buckets, cfg.filter, seed=cfg.seed_for("filter-init"))
    history = {}
    if cfg.data.pretrain_paths > 0:
        source = uniform_dataset(oracle, space, buckets, cfg.data.pretrain_paths,
                                 np.random.default_rng(cfg.seed_for("pretrain-data")))
        model, h = train(model, source, _with_seed(cfg.pretrain, cfg.seed_for("pretrain")))
        history["pretrain"] = h.to_dict()
    model, h = train(model, target, _with_seed(cfg.finetune, cfg.seed_for("finetune")))
    history["finetune"] = h.to_dict()
    return model, history


def _with_seed(tc: TrainConfig, seed: int) -> TrainConfig:
    return replace(tc, seed=seed)


# supernet loops -----------------------------------------------------------------

def _train_epochs(net: ToySupernet, epochs: int, draw, rng, runlog: TrainRunLog, stage: str) -> None:
    for epoch in range(epochs):
        batches = list(net.minibatches(rng))
        paths, fallbacks = draw(len(batches))
        losses = [net.step(p, idx) for p, idx in zip(paths, batches)]
        runlog.append(stage, epoch, paths, losses, fallbacks)


def _uniform_draw(space, rng):
    return lambda n: ([sample_uniform(space, rng) for _ in range(n)], 0)


def _rejection_draw(space, scorer, buckets, thresholds, rng, max_tries):
    def draw(n):
        got = rejection_sample_many(space, scorer, buckets, thresholds, n, rng, max_tries, chunk=8)
        return [d.path for d in got], sum(d.fallback for d in got)
    return draw


def _make_net(cfg: ExperimentConfig, space: SearchSpace) -> ToySupernet:
    task = make_task(cfg.task)
    return ToySupernet(space, task, seed=cfg.seed_for("supernet-init"), lr=cfg.supernet.lr,
                       batch_size=cfg.supernet.batch_size)


def evaluate_methods_paths(net: ToySupernet, per_bucket: list[list]) -> list[dict]:
    rows = []
    for k, paths in enumerate(per_bucket):
        losses = [net.evaluate(p, "val") for p in paths]
        rows.append({"bucket": k, "count": len(paths),
                     "mean_loss": float(np.mean(losses)) if losses else float("nan")})
    return rows


def run_algorithm1(cfg: ExperimentConfig, out_dir=None, filter: PathFilter | None = None,
                   prune_state: PruneState | None = None) -> RunResult:
    """Warm-up, filter training, pruning, thresholds and the filtered main loop.

    Passing both ``filter`` and ``prune_state`` reuses them instead of training
    and pruning inside the run.
    """
    if (filter is None) != (prune_state is None):
        raise ValueError("filter and prune_state must be given together")
    started = time.perf_counter()
    space = cfg.space.base()
    buckets = make_buckets(space, cfg.num_buckets)
    oracle = SyntheticOracle(space, cfg.oracle)
    runlog = TrainRunLog()
    supernet_mode = cfg.mode == "supernet"
    train_rng = np.random.default_rng(cfg.seed_for("supernet-batches"))
    draw_rng = np.random.default_rng(cfg.seed_for("main-draws"))

    net = _make_net(cfg, space) if supernet_mode else None
    if net is not None:
        _train_epochs(net, cfg.supernet.warmup_epochs, _uniform_draw(space, draw_rng), train_rng, runlog, "warmup")
    runlog.wall_time["warmup"] = time.perf_counter() - started

    result = RunResult("pruned", space, buckets, runlog, net=net)
    if prune_state is not None:
        if filter.buckets != buckets:
            raise ValueError("filter bucket edges do not match the configuration")
        if len(prune_state.thresholds) != cfg.num_buckets:
            raise ValueError("prune state has a different number of buckets than the configuration")
        state, scorer, pruned = prune_state, filter, prune_state.apply(space)
        result.filter = filter
        if not prune_state.removed and not any(prune_state.thresholds):
            scorer = None
    elif cfg.prune.disabled:
        # nothing would be removed or rejected: skip the filter altogether so
        # the run is step-for-step the uniform baseline
        pruned = space
        state = PruneState(cfg.prune.strategy, _ratios(cfg), [], [0.0] * cfg.num_buckets, cfg.seed)
        scorer = None
    else:
        source = (lambda p: net.evaluate(p, "val")) if supernet_mode else oracle
        target = sample_scored_dataset(source, space, buckets, cfg.data.finetune_per_bucket,
                                       np.random.default_rng(cfg.seed_for("finetune-data")), cfg.data.max_draws)
        result.finetune_data = target
        model, _ = train_filter(cfg, space, buckets, target, oracle)
        runlog.wall_time["filter"] = time.perf_counter() - started
        p = cfg.prune
        pruned, state = prune(model, space, buckets, p.strategy, p.r_op, p.r_op1, p.r_op2, p.r_path,
                              p.n, p.m, seed=cfg.seed, rng=np.random.default_rng(cfg.seed_for("prune")))
        state.ratios = _ratios(cfg)
        result.filter = model
        scorer = model
    result.prune_state = state
    runlog.wall_time["prune"] = time.perf_counter() - started

    if net is not None:
        if scorer is None or not any(state.thresholds):
            draw = _uniform_draw(pruned, draw_rng)
        else:
            draw = _rejection_draw(pruned, scorer, buckets, state.thresholds, draw_rng, cfg.prune.max_tries)
        _train_epochs(net, cfg.supernet.epochs, draw, train_rng, runlog, "main")
        per_bucket = sample_test_paths(pruned, buckets, cfg.data.test_per_bucket,
                                np.random.default_rng(cfg.seed_for("test-paths")),
                                scorer, state.thresholds if scorer is not None else None, cfg.data.max_draws)
        result.evaluation = evaluate_methods_paths(net, per_bucket)
    result.space = pruned
    runlog.wall_time["total"] = time.perf_counter() - started
    if out_dir is not None:
        save_run(result, cfg, out_dir)
    return result


def _ratios(cfg: ExperimentConfig) -> dict:
    p = cfg.prune
    return {"r_op": p.r_op, "r_op1": p.r_op1, "r_op2": p.r_op2, "r_path": p.r_path, "n": p.n, "m": p.m}


def _baseline(cfg: ExperimentConfig, method: str, coupling: CoupleRule | None, out_dir=None) -> RunResult:
    space = cfg.space.base()
    buckets = make_buckets(space, cfg.num_buckets)
    sample_space = apply_couple_rule(space, coupling) if coupling is not None else space
    runlog = TrainRunLog()
    net = _make_net(cfg, space)
    train_rng = np.random.default_rng(cfg.seed_for("supernet-batches"))
    draw_rng = np.random.default_rng(cfg.seed_for("main-draws"))
    _train_epochs(net, cfg.supernet.warmup_epochs, _uniform_draw(sample_space, draw_rng), train_rng, runlog, "warmup")
    _train_epochs(net, cfg.supernet.epochs, _uniform_draw(sample_space, draw_rng), train_rng, runlog, "main")
    per_bucket = sample_test_paths(sample_space, buckets, cfg.data.test_per_bucket,
                            np.random.default_rng(cfg.seed_for("test-paths")), max_draws=cfg.data.max_draws)
    result = RunResult(method, sample_space, buckets, runlog, net=net,
                       evaluation=evaluate_methods_paths(net, per_bucket))
    if out_dir is not None:
        save_run(result, cfg, out_dir)
    return result


def baseline_uniform(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """Uniform sampling over the full space for the same number of epochs."""
    return _baseline(cfg, "uniform", None, out_dir)


def baseline_coupled(cfg: ExperimentConfig, rule: CoupleRule = COMPOFA_RULE, out_dir=None) -> RunResult:
    """Uniform sampling restricted to coupled (depth, width) pairs."""
    return _baseline(cfg, "coupled", rule, out_dir)


# persistence --------------------------------------------------------------------

def save_run(result: RunResult, cfg: ExperimentConfig, out_dir) -> dict:
    """Write the run's artifacts; returns {relative name: sha256}."""
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    (out / "log.jsonl").write_text(result.log.to_jsonl(), encoding="utf-8")
    (out / "wall_time.json").write_text(json.dumps(result.log.wall_time, sort_keys=True) + "\n", encoding="utf-8")
    (out / "evaluation.json").write_text(json.dumps(result.evaluation, sort_keys=True, indent=1) + "\n",
                                         encoding="utf-8")
    if result.prune_state is not None:
        (out / "prune.json").write_text(result.prune_state.to_json() + "\n", encoding="utf-8")
    if result.finetune_data:
        write_dataset(out / "finetune.jsonl", result.finetune_data)
    if result.filter is not None:
        result.filter.save(out / "filter.ckpt")
    if result.net is not None:
        result.net.save(out / "supernet.ckpt")
    hashes = {}
    for f in sorted(out.rglob("*")):
        if f.is_file() and f.name != "wall_time.json":
            hashes[str(f.relative_to(out))] = sha256_file(f)
    return hashes
