"""Command-line front end: ``pathprune <subcommand> ...``.

Every output gets a run manifest (``<output>.manifest.json``, or
``run_manifest.json`` inside an output directory) holding the configuration hash,
seeds and content hashes of inputs and outputs. Inputs that carry a manifest
with a different configuration hash are refused. Errors are reported as one
JSON object on stderr with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import replace
from importlib import metadata
from pathlib import Path as FsPath

import numpy as np

from .config import ExperimentConfig, load_config, sha256_file
from .filter import PathFilter, bucket_hash, vocab_hash
from .flops import make_buckets
from .oracle import SyntheticOracle
from .pipeline import baseline_coupled, baseline_uniform, run_algorithm1, sample_scored_dataset, save_run
from .pruning import PruneState, prune
from .ranking import (check_dataset, pair_accuracy, read_dataset, score_records, train,
                      weak_detection_metrics, write_dataset)
from .search import evolve, pareto_sweep, sweep_csv
from .space import sample_uniform
from .supernet import ToySupernet, make_task
from .tokenizer import Vocabulary

TOOL = "pathprune"
METHODS = ("pruned", "uniform", "coupled")
RUN_MANIFEST = "run_manifest.json"


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# manifests ----------------------------------------------------------------------

def _hash_path(p: FsPath) -> dict:
    if p.is_dir():
        return {str(f.relative_to(p)): sha256_file(f) for f in sorted(p.rglob("*"))
                if f.is_file() and f.name not in (RUN_MANIFEST, "wall_time.json", ".lock")}
    return {p.name: sha256_file(p)}


def _manifest_path(out: FsPath) -> FsPath:
    return out / RUN_MANIFEST if out.is_dir() else out.with_name(out.name + ".manifest.json")


def write_manifest(out, cfg: ExperimentConfig | None, command: str, args: dict, inputs=()) -> FsPath:
    out = FsPath(out)
    manifest = {
        "tool": TOOL,
        "version": _version(),
        "command": command,
        "args": args,
        "config_hash": cfg.hash() if cfg is not None else None,
        "seed": cfg.seed if cfg is not None else None,
        "stages": {command: "complete"},
        "inputs": {str(i): _hash_path(FsPath(i)) for i in inputs},
        "artifacts": _hash_path(out),
    }
    path = _manifest_path(out)
    path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return path


def verify_input(path, cfg: ExperimentConfig | None) -> None:
    """Check an input against its manifest (if any): content hashes and config hash."""
    path = FsPath(path)
    if not path.exists():
        raise CliError("missing_artifact", f"{path} does not exist")
    mpath = _manifest_path(path)
    if not mpath.exists():
        return
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    if manifest.get("artifacts") != _hash_path(path):
        raise CliError("hash_mismatch", f"{path} does not match the content hashes in {mpath}")
    if cfg is not None and manifest.get("config_hash") not in (None, cfg.hash()):
        raise CliError("config_mismatch", f"{path} was produced under a different configuration")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _load_filter(path, cfg: ExperimentConfig) -> PathFilter:
    verify_input(path, cfg)
    model = PathFilter.load(path)
    buckets = make_buckets(cfg.space, cfg.num_buckets)
    if bucket_hash(model.buckets) != bucket_hash(buckets):
        raise CliError("bucket_mismatch", "filter bucket edges differ from the configuration's")
    if vocab_hash(model.vocab) != vocab_hash(Vocabulary.for_space(cfg.space)):
        raise CliError("vocab_mismatch", "filter vocabulary differs from the configuration's space")
    return model


def _load_prune(path, cfg: ExperimentConfig) -> PruneState:
    verify_input(path, cfg)
    state = PruneState.from_dict(json.loads(FsPath(path).read_text(encoding="utf-8")))
    if len(state.thresholds) != cfg.num_buckets:
        raise CliError("bucket_mismatch", "prune state has a different number of buckets")
    return state


# subcommands --------------------------------------------------------------------

def cmd_gen_data(args) -> None:
    cfg = _config(args)
    space = cfg.space.base()
    buckets = make_buckets(space, cfg.num_buckets)
    m = args.m if args.m is not None else cfg.data.finetune_per_bucket
    rng = np.random.default_rng(cfg.seed_for(f"gen-data:{args.source}"))
    if args.source == "oracle":
        source = SyntheticOracle(space, cfg.oracle)
    else:
        net = ToySupernet(space, make_task(cfg.task), seed=cfg.seed_for("supernet-init"),
                          lr=cfg.supernet.lr, batch_size=cfg.supernet.batch_size)
        brng = np.random.default_rng(cfg.seed_for("supernet-batches"))
        drng = np.random.default_rng(cfg.seed_for("main-draws"))
        for _ in range(cfg.supernet.warmup_epochs):
            for idx in net.minibatches(brng):
                net.step(sample_uniform(space, drng), idx)
        source = lambda p: net.evaluate(p, "val")  # noqa: E731
    records = sample_scored_dataset(source, space, buckets, m, rng, cfg.data.max_draws)
    write_dataset(args.out, records)
    write_manifest(args.out, cfg, "gen-data", {"source": args.source, "m": m})
    print(json.dumps({"records": len(records), "out": str(args.out)}))


def cmd_train_filter(args) -> None:
    cfg = _config(args)
    verify_input(args.data, cfg)
    space = cfg.space.base()
    buckets = make_buckets(space, cfg.num_buckets)
    records = read_dataset(args.data)
    check_dataset(space, buckets, records)
    if args.pretrained:
        model = _load_filter(args.pretrained, cfg)
        tc = replace(cfg.finetune, seed=cfg.seed_for("finetune"))
    else:
        model = PathFilter(space, buckets, cfg.filter, seed=cfg.seed_for("filter-init"))
        tc = replace(cfg.pretrain, seed=cfg.seed_for("pretrain"))
    if args.epochs is not None:
        tc = replace(tc, epochs=args.epochs)
    model, hist = train(model, records, tc)
    model.save(args.out, {"history": hist.to_dict()})
    inputs = [args.data] + ([args.pretrained] if args.pretrained else [])
    write_manifest(args.out, cfg, "train-filter", {"epochs": tc.epochs}, inputs)
    print(json.dumps({"out": str(args.out), "best_epoch": hist.best_epoch}))


def cmd_eval_filter(args) -> None:
    cfg = _config(args)
    model = _load_filter(args.filter, cfg)
    verify_input(args.data, cfg)
    records = read_dataset(args.data)
    check_dataset(model.space, model.buckets, records)
    ratios = [float(r) for r in args.ratio.split(",")]
    scores = score_records(model, records)
    out = {"pair_accuracy": pair_accuracy(model, records),
           "metrics": [weak_detection_metrics(model, records, r, scores) for r in ratios]}
    text = json.dumps(out, sort_keys=True, indent=1) + "\n"
    if args.out:
        FsPath(args.out).write_text(text, encoding="utf-8")
        write_manifest(args.out, cfg, "eval-filter", {"ratio": args.ratio}, [args.filter, args.data])
    sys.stdout.write(text)


def cmd_prune(args) -> None:
    cfg = _config(args)
    model = _load_filter(args.filter, cfg)
    space = cfg.space.base()
    buckets = make_buckets(space, cfg.num_buckets)
    p = cfg.prune
    ratios = dict(strategy=args.strategy or p.strategy,
                  r_op=p.r_op if args.r_op is None else args.r_op,
                  r_op1=p.r_op1 if args.r_op1 is None else args.r_op1,
                  r_op2=p.r_op2 if args.r_op2 is None else args.r_op2,
                  r_path=p.r_path if args.r_path is None else args.r_path)
    _, state = prune(model, space, buckets, ratios["strategy"], ratios["r_op"], ratios["r_op1"],
                     ratios["r_op2"], ratios["r_path"], p.n, p.m, seed=cfg.seed,
                     rng=np.random.default_rng(cfg.seed_for("prune")))
    FsPath(args.out).write_text(state.to_json() + "\n", encoding="utf-8")
    write_manifest(args.out, cfg, "prune", ratios, [args.filter])
    print(json.dumps({"removed": len(state.removed), "thresholds": state.thresholds}))


class _RunLock:
    def __init__(self, directory: FsPath):
        self.path = directory / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as exc:
            raise CliError("locked", f"{self.path.parent} is in use by another process") from exc
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def cmd_train_supernet(args) -> None:
    cfg = _config(args)
    if args.epochs is not None:
        cfg = replace(cfg, supernet=replace(cfg.supernet, epochs=args.epochs))
    cfg = replace(cfg, mode="supernet")
    root = FsPath(args.out)
    methods = METHODS if args.method == "all" else (args.method,)
    inputs = []
    model = state = None
    if args.prune:
        if not args.filter:
            raise CliError("usage", "--prune needs --filter for rejection sampling")
        state, model = _load_prune(args.prune, cfg), _load_filter(args.filter, cfg)
        inputs = [args.prune, args.filter]
    with _RunLock(root):
        summary = {}
        for method in methods:
            out = root / method
            if method == "pruned":
                res = run_algorithm1(cfg, filter=model, prune_state=state)
            elif method == "uniform":
                res = baseline_uniform(cfg)
            else:
                res = baseline_coupled(cfg)
            save_run(res, cfg, out)
            summary[method] = res.evaluation
        (root / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
        write_manifest(root, cfg, "train-supernet", {"methods": list(methods)}, inputs)
    print(json.dumps(summary, sort_keys=True))


def cmd_search(args) -> None:
    cfg = _config(args)
    model = _load_filter(args.filter, cfg)
    space = cfg.space.base()
    inputs = [args.filter]
    if args.prune:
        space = _load_prune(args.prune, cfg).apply(space)
        inputs.append(args.prune)
    evo = replace(cfg.search, seed=cfg.seed_for("search"))
    if args.generations is not None:
        evo = replace(evo, generations=args.generations)
    oracle = SyntheticOracle(space, cfg.oracle) if cfg.mode == "oracle" else None
    if args.sweep:
        _, text = pareto_sweep(model, space, [float(b) for b in args.sweep.split(",")], evo, oracle)
    else:
        text = sweep_csv([evolve(model, space, args.budget, evo)], oracle)
    if args.out:
        FsPath(args.out).write_text(text, encoding="utf-8")
        write_manifest(args.out, cfg, "search", {"budget": args.budget, "sweep": args.sweep}, inputs)
    sys.stdout.write(text)


def cmd_report(args) -> None:
    root = FsPath(args.run)
    verify_input(root, None)
    rows = []
    for method in METHODS:
        f = root / method / "evaluation.json"
        if f.exists():
            for r in json.loads(f.read_text(encoding="utf-8")):
                rows.append((r["bucket"], method, r["count"], r["mean_loss"]))
    if not rows:
        raise CliError("missing_artifact", f"no evaluations found under {root}")
    rows.sort()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bucket", "method", "test_paths", "mean_val_loss"])
    for b, m, n, loss in rows:
        w.writerow([b, m, n, repr(float(loss))])
    FsPath(args.out).write_text(buf.getvalue(), encoding="utf-8")
    sweep = root / "search.csv"
    if sweep.exists():
        front = FsPath(args.out).with_name(FsPath(args.out).stem + "_front.csv")
        front.write_text(sweep.read_text(encoding="utf-8"), encoding="utf-8")
    write_manifest(args.out, None, "report", {}, [args.run])
    sys.stdout.write(buf.getvalue())


# parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog=TOOL, description="Search-space pruning with a FLOPs-conditioned path filter.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="experiment config JSON (default: built-in toy setup)")
        sp.add_argument("--seed", type=int, help="override the master seed")

    g = sub.add_parser("gen-data", help="sample m paths per FLOPs bucket and score them")
    common(g)
    g.add_argument("--source", choices=("oracle", "supernet"), default="oracle")
    g.add_argument("--m", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train-filter", help="train (or fine-tune) the path filter")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--pretrained")
    t.add_argument("--epochs", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_filter)

    e = sub.add_parser("eval-filter", help="weak-path detection metrics")
    common(e)
    e.add_argument("--filter", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--ratio", default="0.25", help="one ratio or a comma-separated list")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval_filter)

    r = sub.add_parser("prune", help="operation pruning and path thresholds")
    common(r)
    r.add_argument("--filter", required=True)
    r.add_argument("--strategy", choices=("flops_uniform", "flops_score_per_bucket", "flops_score_all"))
    r.add_argument("--r-op", dest="r_op", type=float)
    r.add_argument("--r-op1", dest="r_op1", type=float)
    r.add_argument("--r-op2", dest="r_op2", type=float)
    r.add_argument("--r-path", dest="r_path", type=float)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_prune)

    s = sub.add_parser("train-supernet", help="train the toy supernet with pruning or a baseline")
    common(s)
    s.add_argument("--prune")
    s.add_argument("--filter")
    s.add_argument("--method", choices=METHODS + ("all",), default="all")
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_supernet)

    q = sub.add_parser("search", help="FLOPs-constrained evolutionary search")
    common(q)
    q.add_argument("--filter", required=True)
    q.add_argument("--prune")
    q.add_argument("--budget", type=float)
    q.add_argument("--sweep", help="comma-separated budgets")
    q.add_argument("--generations", type=int)
    q.add_argument("--out")
    q.set_defaults(func=cmd_search)

    o = sub.add_parser("report", help="bucketed path-performance table from a run directory")
    o.add_argument("--run", required=True)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "search" and args.budget is None and not args.sweep:
        parser.error("search needs --budget or --sweep")
    try:
        args.func(args)
    except CliError as exc:
        sys.stderr.write(json.dumps({"error": exc.kind, "message": str(exc)}) + "\n")
        return 2
    except (ValueError, KeyError, OSError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
