"""Analytic FLOPs of bottleneck paths and equal-width FLOPs buckets.

Each active layer is a residual bottleneck at ``C`` channels with ``H``
hidden channels: a 1x1 reduce (C*H), a kxk conv (k^2*H^2) and a 1x1 restore
(H*C), all multiplied by the block's spatial area. Every block also starts
with a 1x1 transition from the previous block's channels. One
multiply-accumulate counts as two FLOPs; totals are reported in MFLOPs.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

from .space import BlockChoice, Path, SearchSpace, hidden_channels, validate_path

MEGA = 1e6


@dataclass(frozen=True)
class FlopsReport:
    total: float
    per_block: tuple[float, ...]
    per_layer: tuple[tuple[float, ...], ...]


def _layer_macs(channels: int, hidden: int, kernel: int) -> int:
    return channels * hidden + kernel * kernel * hidden * hidden + hidden * channels


def _area(space: SearchSpace, block: int) -> int:
    return space.block_side(block) ** 2


def operation_flops(space: SearchSpace, block: int, layer: int, width: float,
                    expand: float | None) -> float:
    """Cost in MFLOPs of one layer configuration; ``expand=None`` is a skip (0)."""
    blk = space.blocks[block]
    if not 0 <= layer < blk.max_layers:
        raise ValueError(f"layer {layer} outside block {block} (max {blk.max_layers})")
    if width not in blk.width_choices:
        raise ValueError(f"width {width} not a choice of block {block}")
    if expand is None:
        return 0.0
    if expand not in blk.expand_choices:
        raise ValueError(f"expand {expand} not a choice of block {block}")
    c = space.channels(block, width)
    macs = _layer_macs(c, hidden_channels(c, expand), space.kernel_size) * _area(space, block)
    return 2.0 * macs / MEGA


def _transition_flops(space: SearchSpace, block: int, c_in: int, c_out: int) -> float:
    return 2.0 * c_in * c_out * _area(space, block) / MEGA


def _cached_layer_flops(space: SearchSpace, b: int, width: float, expand: float) -> float:
    # per-layer cost does not depend on the layer index; memoised on the space
    cache = space.__dict__.setdefault("_layer_flops_cache", {})
    key = (b, width, expand)
    v = cache.get(key)
    if v is None:
        v = cache[key] = operation_flops(space, b, 0, width, expand)
    return v


def _block_flops(space: SearchSpace, b: int, choice: BlockChoice, c_in: int) -> tuple[float, tuple[float, ...]]:
    blk = space.blocks[b]
    layers = [_cached_layer_flops(space, b, choice.width, e) for e in choice.expands]
    layers += [0.0] * (blk.max_layers - len(layers))
    c_out = space.channels(b, choice.width)
    return math.fsum([_transition_flops(space, b, c_in, c_out)] + layers), tuple(layers)


def path_flops(space: SearchSpace, path: Path) -> FlopsReport:
    check = validate_path(space.base(), path)
    if not check:
        raise ValueError("invalid path: " + "; ".join(check.reasons))
    per_block, per_layer = [], []
    c_in = space.input_channels
    for b, choice in enumerate(path.blocks):
        total_b, layers = _block_flops(space, b, choice, c_in)
        per_block.append(total_b)
        per_layer.append(layers)
        c_in = space.channels(b, choice.width)
    return FlopsReport(math.fsum(per_block), tuple(per_block), tuple(per_layer))


def total_flops(space: SearchSpace, path: Path) -> float:
    return path_flops(space, path).total


def extreme_path(space: SearchSpace, largest: bool) -> Path:
    """Exact FLOPs argmin/argmax over the (possibly restricted) space.

    Dynamic programming over blocks, with the previous block's width as state
    (the only coupling between blocks is the transition cost).
    """
    pick = max if largest else min
    # state: previous channel count -> (cost so far, choices so far)
    states: dict[int, tuple[float, tuple[BlockChoice, ...]]] = {space.input_channels: (0.0, ())}
    for b in range(space.num_blocks):
        nxt: dict[int, tuple[float, tuple[BlockChoice, ...]]] = {}
        for d, w, _, per_layer in space._block_options(b):
            expands = tuple(pick(choices) for choices in per_layer)
            choice = BlockChoice(d, w, expands)
            c_out = space.channels(b, w)
            for c_in, (cost, prefix) in states.items():
                cand = cost + _block_flops(space, b, choice, c_in)[0]
                best = nxt.get(c_out)
                if best is None or (cand > best[0] if largest else cand < best[0]):
                    nxt[c_out] = (cand, prefix + (choice,))
        if not nxt:
            raise ValueError(f"block {b} has no valid configuration")
        states = nxt
    _, choices = pick(states.values(), key=lambda s: s[0])
    return Path(choices)


def flops_range(space: SearchSpace) -> tuple[float, float]:
    return (total_flops(space, extreme_path(space, largest=False)),
            total_flops(space, extreme_path(space, largest=True)))


@dataclass(frozen=True)
class BucketSpec:
    """``num_buckets`` equal-width FLOPs intervals over ``[min_flops, max_flops]``."""

    num_buckets: int
    min_flops: float
    max_flops: float
    edges: tuple[float, ...]

    @classmethod
    def from_range(cls, lo: float, hi: float, num_buckets: int) -> "BucketSpec":
        if num_buckets < 1:
            raise ValueError("need at least one bucket")
        if hi < lo:
            raise ValueError("max_flops below min_flops")
        step = (hi - lo) / num_buckets
        edges = [lo + k * step for k in range(num_buckets)] + [hi]
        return cls(num_buckets, float(lo), float(hi), tuple(edges))

    @property
    def upper_edges(self) -> tuple[float, ...]:
        return self.edges[1:]

    def to_dict(self) -> dict:
        return {"num_buckets": self.num_buckets, "min_flops": self.min_flops,
                "max_flops": self.max_flops, "edges": list(self.edges)}

    @classmethod
    def from_dict(cls, d: dict) -> "BucketSpec":
        return cls(int(d["num_buckets"]), float(d["min_flops"]), float(d["max_flops"]),
                   tuple(float(e) for e in d["edges"]))


def make_buckets(space: SearchSpace, num_buckets: int) -> BucketSpec:
    lo, hi = flops_range(space)
    return BucketSpec.from_range(lo, hi, num_buckets)


def bucket_of(spec: BucketSpec, flops: float) -> int:
    """Index of the half-open bucket ``[edge_k, edge_k+1)``; the last one is closed."""
    if not spec.min_flops <= flops <= spec.max_flops:
        raise ValueError(f"flops {flops} outside [{spec.min_flops}, {spec.max_flops}]")
    k = bisect.bisect_right(spec.edges, flops) - 1
    return min(k, spec.num_buckets - 1)


def path_bucket(space: SearchSpace, spec: BucketSpec, path: Path) -> int:
    return bucket_of(spec, total_flops(space, path))
