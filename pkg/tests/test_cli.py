import csv
import json
import shutil
from pathlib import Path

import pytest

from pathprune.cli import main

CONFIG = str(Path(__file__).resolve().parents[1] / "configs" / "smoke.json")


def run_pipeline(workdir: Path, monkeypatch):
    monkeypatch.chdir(workdir)
    steps = [
        ["gen-data", "--config", CONFIG, "--source", "oracle", "--out", "data.jsonl"],
        ["train-filter", "--config", CONFIG, "--data", "data.jsonl", "--out", "filter.ckpt"],
        ["eval-filter", "--config", CONFIG, "--filter", "filter.ckpt", "--data", "data.jsonl",
         "--ratio", "0.2,0.3", "--out", "eval.json"],
        ["prune", "--config", CONFIG, "--filter", "filter.ckpt", "--r-op1", "0.1", "--r-op2", "0.3",
         "--out", "prune.json"],
        ["train-supernet", "--config", CONFIG, "--prune", "prune.json", "--filter", "filter.ckpt", "--out", "run"],
        ["search", "--config", CONFIG, "--filter", "filter.ckpt", "--prune", "prune.json",
         "--sweep", "0.01,0.02,0.03", "--out", "front.csv"],
        ["report", "--run", "run", "--out", "report.csv"],
    ]
    for argv in steps:
        assert main(argv) == 0, argv


def snapshot(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "wall_time.json"}


@pytest.fixture(scope="module")
def pipeline_dirs(tmp_path_factory):
    mp = pytest.MonkeyPatch()
    dirs = [tmp_path_factory.mktemp(name) for name in ("first", "second")]
    try:
        for d in dirs:
            run_pipeline(d, mp)
    finally:
        mp.undo()
    return dirs


def test_pipeline_produces_all_artifacts(pipeline_dirs):
    d = pipeline_dirs[0]
    for name in ("data.jsonl", "filter.ckpt/manifest.json", "prune.json", "front.csv", "report.csv",
                 "run/run_manifest.json", "run/pruned/evaluation.json", "run/uniform/supernet.ckpt/manifest.json",
                 "run/coupled/log.jsonl"):
        assert (d / name).exists(), name
    for name in ("data.jsonl", "prune.json", "front.csv", "report.csv", "eval.json"):
        manifest = json.loads((d / f"{name}.manifest.json").read_text())
        assert manifest["tool"] == "pathprune" and manifest["artifacts"]
    rows = list(csv.DictReader((d / "report.csv").open()))
    assert len(rows) == 15 and {r["method"] for r in rows} == {"pruned", "uniform", "coupled"}
    ev = json.loads((d / "eval.json").read_text())
    assert [m["ratio"] for m in ev["metrics"]] == [0.2, 0.3]


def test_pipeline_is_byte_identical(pipeline_dirs):
    a, b = (snapshot(d) for d in pipeline_dirs)
    assert a.keys() == b.keys()
    assert [k for k in a if a[k] != b[k]] == []


def _error(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)["error"]


def test_refuses_mismatched_config(pipeline_dirs, monkeypatch, capsys):
    monkeypatch.chdir(pipeline_dirs[0])
    assert main(["prune", "--config", CONFIG, "--seed", "9", "--filter", "filter.ckpt", "--out", "x.json"]) == 2
    assert _error(capsys) == "config_mismatch"


def test_refuses_tampered_artifact(pipeline_dirs, monkeypatch, capsys, tmp_path):
    monkeypatch.chdir(tmp_path)
    src = pipeline_dirs[0]
    Path("prune.json").write_text((src / "prune.json").read_text() + " ")
    Path("prune.json.manifest.json").write_text((src / "prune.json.manifest.json").read_text())
    assert main(["search", "--config", CONFIG, "--filter", str(src / "filter.ckpt"), "--prune", "prune.json",
                 "--budget", "0.02"]) == 2
    assert _error(capsys) == "hash_mismatch"


def test_refuses_locked_run_directory(monkeypatch, capsys, tmp_path):
    monkeypatch.chdir(tmp_path)
    Path("run").mkdir()
    Path("run/.lock").touch()
    assert main(["train-supernet", "--config", CONFIG, "--method", "uniform", "--out", "run"]) == 2
    assert _error(capsys) == "locked"


def test_missing_input_is_a_json_error(monkeypatch, capsys, tmp_path):
    monkeypatch.chdir(tmp_path)
    assert main(["eval-filter", "--config", CONFIG, "--filter", "nope.ckpt", "--data", "nope.jsonl"]) != 0
    assert _error(capsys) == "missing_artifact"


def test_bucket_mismatch_between_filter_and_config(pipeline_dirs, monkeypatch, capsys, tmp_path):
    cfg = json.loads(Path(CONFIG).read_text())
    cfg["num_buckets"] = 4
    other = tmp_path / "four.json"
    other.write_text(json.dumps(cfg))
    monkeypatch.chdir(tmp_path)
    # copy the filter without its manifest so only the bucket check can object
    shutil.copytree(pipeline_dirs[0] / "filter.ckpt", "f.ckpt")
    Path("f.ckpt/run_manifest.json").unlink()
    assert main(["prune", "--config", str(other), "--filter", "f.ckpt", "--out", "p.json"]) == 2
    assert _error(capsys) == "bucket_mismatch"


def test_search_needs_a_budget():
    with pytest.raises(SystemExit):
        main(["search", "--filter", "f.ckpt"])


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for cmd in ("gen-data", "train-filter", "eval-filter", "prune", "train-supernet", "search", "report"):
        assert cmd in out
