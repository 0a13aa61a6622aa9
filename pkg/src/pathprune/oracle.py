"""Deterministic synthetic performance oracle.

The loss of a path is ``exp(-U / scale) + noise`` where the utility ``U`` sums

* a per-layer term for every active layer: a random per-(block, layer)
  efficiency times a table over (width, expand) that increases along both
  axes. The table is ``(op_flops / ref) ** cost_exponent`` plus a random
  monotone jitter, so utility grows with compute (with diminishing returns)
  but not as a fixed function of it, and
* an interaction term between the widths of adjacent blocks, also increasing
  in both arguments.

Per-(block, layer) magnitudes are log-normal, so a unit of FLOPs buys a
different amount of utility in different places; ranking within a FLOPs
bucket is therefore not a function of FLOPs. Without noise, any
capacity-increasing change (deeper block, wider block, larger expand) strictly
lowers the loss. Noise is drawn once per path from a hash of its canonical
JSON, so a path always gets the same value.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .flops import operation_flops
from .space import Path, SearchSpace, max_path


def _monotone_table(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Strictly increasing along both axes: 2-D cumulative sum of positive increments."""
    inc = rng.uniform(0.2, 1.0, size=(rows, cols))
    return inc.cumsum(axis=0).cumsum(axis=1)


@dataclass(frozen=True)
class OracleConfig:
    seed: int = 0
    noise_std: float = 0.002
    interaction_scale: float = 0.3
    spread: float = 0.6
    cost_exponent: float = 0.5
    jitter: float = 0.5


class SyntheticOracle:
    def __init__(self, space: SearchSpace, cfg: OracleConfig = OracleConfig()):
        self.space = space.base()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self._w_index = [{w: i for i, w in enumerate(b.width_choices)} for b in self.space.blocks]
        self._e_index = [{e: i for i, e in enumerate(b.expand_choices)} for b in self.space.blocks]
        costs = [np.array([[operation_flops(self.space, b, 0, w, e) for e in blk.expand_choices]
                           for w in blk.width_choices]) for b, blk in enumerate(self.space.blocks)]
        ref = float(np.mean(np.concatenate([c.ravel() for c in costs])))
        self.utility = []
        for blk, cost in zip(self.space.blocks, costs):
            scale = rng.lognormal(0.0, cfg.spread, size=blk.max_layers)
            # later layers of a block contribute a bit less
            scale *= 0.85 ** np.arange(blk.max_layers)
            tables = []
            for s in scale:
                jit = _monotone_table(rng, *cost.shape)
                tables.append(s * ((cost / ref) ** cfg.cost_exponent + cfg.jitter * jit / jit.max()))
            self.utility.append(np.stack(tables))
        self.interaction = []
        for b in range(self.space.num_blocks - 1):
            nw0 = len(self.space.blocks[b].width_choices)
            nw1 = len(self.space.blocks[b + 1].width_choices)
            self.interaction.append(cfg.interaction_scale * _monotone_table(rng, nw0, nw1))
        self.scale = self.utility_of(max_path(self.space))

    def utility_of(self, path: Path) -> float:
        total = 0.0
        for b, choice in enumerate(path.blocks):
            wi = self._w_index[b][choice.width]
            table = self.utility[b]
            for l, e in enumerate(choice.expands):
                total += table[l, wi, self._e_index[b][e]]
        for b, inter in enumerate(self.interaction):
            total += inter[self._w_index[b][path.blocks[b].width], self._w_index[b + 1][path.blocks[b + 1].width]]
        return float(total)

    def noise(self, path: Path) -> float:
        if self.cfg.noise_std == 0:
            return 0.0
        digest = hashlib.sha256(f"{self.cfg.seed}:{path.to_json()}".encode()).digest()
        z = np.random.default_rng(int.from_bytes(digest[:8], "little")).standard_normal()
        return float(self.cfg.noise_std * z)

    def clean_loss(self, path: Path) -> float:
        return float(np.exp(-self.utility_of(path) / self.scale))

    def __call__(self, path: Path) -> float:
        return self.clean_loss(path) + self.noise(path)


def oracle_eval(oracle: SyntheticOracle, path: Path) -> float:
    return oracle(path)
