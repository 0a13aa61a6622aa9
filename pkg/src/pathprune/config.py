"""Experiment configuration, seed derivation and content hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .filter import FilterConfig
from .oracle import OracleConfig
from .ranking import TrainConfig
from .search import EvoConfig
from .space import SearchSpace, space_from_dict, space_to_dict, toy_space
from .supernet import TaskConfig


def derive_seed(master: int, stage: str) -> int:
    """64-bit sub-seed: first 8 bytes (little endian) of sha256("<master>:<stage>")."""
    return int.from_bytes(hashlib.sha256(f"{master}:{stage}".encode()).digest()[:8], "little")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _build(cls, d: dict | None):
    if d is None:
        return cls()
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass(frozen=True)
class PruneConfig:
    strategy: str = "flops_score_all"
    r_op: float = 0.3
    r_op1: float = 0.1
    r_op2: float = 0.3
    r_path: float = 0.25
    n: int = 32
    m: int = 50
    max_tries: int = 100

    @property
    def disabled(self) -> bool:
        return self.r_op1 == 0 and self.r_op2 == 0 and self.r_path == 0 and \
            (self.strategy == "flops_score_all" or self.r_op == 0)


@dataclass(frozen=True)
class SupernetConfig:
    warmup_epochs: int = 1
    epochs: int = 9
    lr: float = 1e-3
    batch_size: int = 64


@dataclass(frozen=True)
class DataConfig:
    pretrain_paths: int = 2000
    finetune_per_bucket: int = 40
    test_per_bucket: int = 15
    max_draws: int = 50_000


@dataclass(frozen=True)
class ExperimentConfig:
    space: SearchSpace = field(default_factory=toy_space)
    seed: int = 0
    num_buckets: int = 5
    mode: str = "supernet"
    oracle: OracleConfig = OracleConfig()
    task: TaskConfig = TaskConfig()
    filter: FilterConfig = FilterConfig()
    pretrain: TrainConfig = TrainConfig(epochs=30)
    finetune: TrainConfig = TrainConfig(epochs=30, lr=1e-4)
    data: DataConfig = DataConfig()
    prune: PruneConfig = PruneConfig()
    supernet: SupernetConfig = SupernetConfig()
    search: EvoConfig = EvoConfig()

    def __post_init__(self):
        if self.mode not in ("oracle", "supernet"):
            raise ValueError(f"mode must be 'oracle' or 'supernet', not {self.mode!r}")
        if self.num_buckets < 1:
            raise ValueError("num_buckets must be positive")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        out = {k: (asdict(v) if hasattr(v, "__dataclass_fields__") and k != "space" else v) for k, v in d.items()}
        out["space"] = space_to_dict(self.space)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            space=space_from_dict(d["space"]) if "space" in d else toy_space(),
            seed=int(d.get("seed", 0)),
            num_buckets=int(d.get("num_buckets", 5)),
            mode=d.get("mode", "supernet"),
            oracle=_build(OracleConfig, d.get("oracle")),
            task=_build(TaskConfig, d.get("task")),
            filter=_build(FilterConfig, d.get("filter")),
            pretrain=_build(TrainConfig, d.get("pretrain", {"epochs": 30})),
            finetune=_build(TrainConfig, d.get("finetune", {"epochs": 30})),
            data=_build(DataConfig, d.get("data")),
            prune=_build(PruneConfig, d.get("prune")),
            supernet=_build(SupernetConfig, d.get("supernet")),
            search=_build(EvoConfig, d.get("search")),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()

    def seed_for(self, stage: str) -> int:
        return derive_seed(self.seed, stage)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(json.load(fh))
