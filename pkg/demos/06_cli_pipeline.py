"""Drive every command-line stage on the smoke configuration.

Each stage writes its output plus a manifest of content hashes. Later stages
refuse inputs whose hashes or configuration do not match, which this script
demonstrates at the end by tampering with one file.
"""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

config = str(Path(__file__).resolve().parents[1] / "configs" / "smoke.json")
work = Path(tempfile.mkdtemp(prefix="pathprune-demo-"))


def run(*argv):
    proc = subprocess.run([sys.executable, "-m", "pathprune.cli", *argv], cwd=work, capture_output=True, text=True)
    print(f"$ pathprune {' '.join(argv)}  -> exit {proc.returncode}")
    return proc


run("gen-data", "--config", config, "--out", "data.jsonl")
run("train-filter", "--config", config, "--data", "data.jsonl", "--out", "filter.ckpt")
print(run("eval-filter", "--config", config, "--filter", "filter.ckpt", "--data", "data.jsonl",
          "--ratio", "0.2,0.3", "--out", "eval.json").stdout)
run("prune", "--config", config, "--filter", "filter.ckpt", "--out", "prune.json")
run("train-supernet", "--config", config, "--prune", "prune.json", "--filter", "filter.ckpt", "--out", "run")
run("search", "--config", config, "--filter", "filter.ckpt", "--prune", "prune.json",
    "--sweep", "0.01,0.02,0.03", "--out", "front.csv")
print(run("report", "--run", "run", "--out", "report.csv").stdout)

manifest = json.loads((work / "prune.json.manifest.json").read_text())
print(f"prune.json manifest: command={manifest['command']} config_hash={manifest['config_hash'][:12]}...")

with open(work / "prune.json", "a") as f:
    f.write(" ")
err = run("search", "--config", config, "--filter", "filter.ckpt", "--prune", "prune.json", "--budget", "0.02")
print(f"after tampering: {err.stderr.strip().splitlines()[-1]}")
print(f"\nartifacts left in {work}")
