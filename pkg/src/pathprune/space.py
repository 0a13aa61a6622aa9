"""Chain-structured elastic search spaces and the paths they contain.

A search space is a list of blocks. Each block picks a depth ``d`` (which sets
how many bottleneck layers are active), a channel width ratio ``w`` shared by
the whole block, and one expand ratio ``e`` per active layer. A space may carry
two kinds of restriction:

* a coupling rule, listing the (depth, width) pairs that are allowed;
* a set of removed operations ``(block, layer, width, expand)`` produced by
  operation pruning.

Counting, enumeration and uniform sampling all honour both restrictions.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple, Sequence

import numpy as np

OpKey = tuple[int, int, float, float]


def format_ratio(x: float) -> str:
    """Shortest decimal string that round-trips to the same float ("1.0", "0.25")."""
    return repr(float(x))


def parse_ratio(s: str | float) -> float:
    return float(s)


@dataclass(frozen=True)
class BlockSpec:
    """Choice sets of one block.

    ``layer_counts[i]`` is the number of active layers when the block uses
    ``depth_choices[i]``.
    """

    depth_choices: tuple[int, ...]
    width_choices: tuple[float, ...]
    expand_choices: tuple[float, ...]
    layer_counts: tuple[int, ...]

    def __post_init__(self):
        for name in ("depth_choices", "width_choices", "expand_choices", "layer_counts"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not (self.depth_choices and self.width_choices and self.expand_choices):
            raise ValueError("every choice set must be non-empty")
        for name in ("depth_choices", "width_choices", "expand_choices"):
            values = getattr(self, name)
            if list(values) != sorted(set(values)):
                raise ValueError(f"{name} must be strictly ascending: {values}")
        if any(d < 0 for d in self.depth_choices):
            raise ValueError("depths must be non-negative")
        for name in ("width_choices", "expand_choices"):
            if any(not 0.0 < r <= 1.0 for r in getattr(self, name)):
                raise ValueError(f"{name} must lie in (0, 1]")
        if len(self.layer_counts) != len(self.depth_choices):
            raise ValueError("layer_counts must align with depth_choices")
        if any(n < 1 for n in self.layer_counts):
            raise ValueError("every depth must activate at least one layer")
        if any(b <= a for a, b in zip(self.layer_counts, self.layer_counts[1:])):
            raise ValueError("layer_counts must be strictly increasing in depth")

    @classmethod
    def make(cls, depths, widths, expands, min_layers: int = 2) -> "BlockSpec":
        """Block whose layer count is ``min_layers + d``."""
        depths = tuple(sorted(int(d) for d in depths))
        return cls(
            depth_choices=depths,
            width_choices=tuple(sorted(float(w) for w in widths)),
            expand_choices=tuple(sorted(float(e) for e in expands)),
            layer_counts=tuple(min_layers + d for d in depths),
        )

    @property
    def max_layers(self) -> int:
        return self.layer_counts[-1]

    def layers_for_depth(self, depth: int) -> int:
        try:
            return self.layer_counts[self.depth_choices.index(depth)]
        except ValueError:
            raise ValueError(f"depth {depth} not in {self.depth_choices}") from None


@dataclass(frozen=True)
class BlockChoice:
    depth: int
    width: float
    expands: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "expands", tuple(float(e) for e in self.expands))
        object.__setattr__(self, "width", float(self.width))
        object.__setattr__(self, "depth", int(self.depth))


@dataclass(frozen=True)
class Path:
    """One concrete architecture: a :class:`BlockChoice` per block."""

    blocks: tuple[BlockChoice, ...]

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    def to_dict(self) -> dict:
        return {
            "blocks": [
                {"d": b.depth, "w": format_ratio(b.width), "e": [format_ratio(e) for e in b.expands]}
                for b in self.blocks
            ]
        }

    def to_json(self) -> str:
        """Canonical serialization: sorted keys, ratios as decimal strings."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Path":
        return cls(
            tuple(
                BlockChoice(int(b["d"]), parse_ratio(b["w"]), tuple(parse_ratio(e) for e in b["e"]))
                for b in d["blocks"]
            )
        )

    @classmethod
    def from_json(cls, s: str) -> "Path":
        return cls.from_dict(json.loads(s))

    def key(self) -> str:
        return self.to_json()


@dataclass(frozen=True)
class CoupleRule:
    """Allowed (depth, width) pairs, identical for every block."""

    pairs: tuple[tuple[int, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((int(d), float(w)) for d, w in self.pairs))


#: CompOFA-style coupling used as a hand-crafted baseline.
COMPOFA_RULE = CoupleRule(((0, 0.65), (1, 0.8), (2, 1.0)))


class PathCheck(NamedTuple):
    ok: bool
    reasons: tuple[str, ...]

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class SearchSpace:
    """Ordered blocks plus the geometry the cost model needs.

    ``input_resolution`` and ``kernel_size`` only feed the FLOPs model: block
    ``b`` runs at spatial side ``max(1, input_resolution // (4 * 2**b))``.
    Use ``input_resolution=1, kernel_size=1`` for fully connected toy networks.
    """

    blocks: tuple[BlockSpec, ...]
    base_channels: tuple[int, ...]
    input_resolution: int = 224
    input_channels: int = 3
    kernel_size: int = 3
    coupling: CoupleRule | None = None
    removed: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "base_channels", tuple(int(c) for c in self.base_channels))
        object.__setattr__(self, "removed", frozenset(self.removed))
        if not self.blocks:
            raise ValueError("a search space needs at least one block")
        if len(self.base_channels) != len(self.blocks):
            raise ValueError("base_channels must have one entry per block")
        if any(c < 1 for c in self.base_channels):
            raise ValueError("base_channels must be positive")
        if self.input_resolution < 1 or self.input_channels < 1 or self.kernel_size < 1:
            raise ValueError("geometry parameters must be positive")
        if self.coupling is not None:
            _check_coupling(self, self.coupling)
        # distinct ratios must map to distinct channel counts, otherwise FLOPs
        # would not be strictly monotone in width/expand
        for b, blk in enumerate(self.blocks):
            chans = [self.channels(b, w) for w in blk.width_choices]
            if len(set(chans)) != len(chans):
                raise ValueError(f"block {b}: width choices collapse to channels {chans}")
            for c in chans:
                hid = [hidden_channels(c, e) for e in blk.expand_choices]
                if len(set(hid)) != len(hid):
                    raise ValueError(f"block {b}: expand choices collapse to {hid} at {c} channels")

    # geometry -------------------------------------------------------------

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def max_sequence_length(self) -> int:
        return sum(b.max_layers for b in self.blocks)

    def channels(self, block: int, width: float) -> int:
        return max(1, math.floor(self.base_channels[block] * width + 0.5))

    def block_side(self, block: int) -> int:
        return max(1, self.input_resolution // (4 * 2**block))

    # restrictions ---------------------------------------------------------

    def base(self) -> "SearchSpace":
        """The unrestricted space (no coupling, nothing removed)."""
        if self.coupling is None and not self.removed:
            return self
        cached = self.__dict__.get("_base_cache")
        if cached is None:
            cached = self.__dict__["_base_cache"] = replace(self, coupling=None, removed=frozenset())
        return cached

    def without(self, ops) -> "SearchSpace":
        """View with additional operations removed."""
        return replace(self, removed=self.removed | frozenset(_op_key(o) for o in ops))

    def depth_width_options(self, block: int) -> list[tuple[int, float]]:
        blk = self.blocks[block]
        opts = [(d, w) for d in blk.depth_choices for w in blk.width_choices]
        if self.coupling is not None:
            allowed = set(self.coupling.pairs)
            opts = [o for o in opts if o in allowed]
        return opts

    def allowed_expands(self, block: int, layer: int, width: float) -> tuple[float, ...]:
        blk = self.blocks[block]
        if not self.removed:
            return blk.expand_choices
        return tuple(e for e in blk.expand_choices if (block, layer, float(width), e) not in self.removed)

    def operations(self) -> list[OpKey]:
        """Every (block, layer, width, expand) of the unrestricted space."""
        return [
            (b, l, w, e)
            for b, blk in enumerate(self.blocks)
            for l in range(blk.max_layers)
            for w in blk.width_choices
            for e in blk.expand_choices
        ]

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(space_to_dict(self), sort_keys=True).encode()).hexdigest()

    # per-block combinatorics ---------------------------------------------

    def _block_options(self, block: int) -> list[tuple[int, float, int, list[tuple[float, ...]]]]:
        cache = self.__dict__.setdefault("_options_cache", {})
        if block not in cache:
            cache[block] = self._compute_block_options(block)
        return cache[block]

    def _compute_block_options(self, block: int) -> list[tuple[int, float, int, list[tuple[float, ...]]]]:
        blk = self.blocks[block]
        out = []
        for d, w in self.depth_width_options(block):
            n_layers = blk.layers_for_depth(d)
            per_layer = [self.allowed_expands(block, l, w) for l in range(n_layers)]
            count = math.prod(len(p) for p in per_layer)
            if count:
                out.append((d, w, count, per_layer))
        return out

    def block_count(self, block: int) -> int:
        return sum(opt[2] for opt in self._block_options(block))


def hidden_channels(channels: int, expand: float) -> int:
    return max(1, math.floor(channels * expand + 0.5))


def _op_key(op) -> OpKey:
    if hasattr(op, "key"):
        op = op.key()
    b, l, w, e = op
    return (int(b), int(l), float(w), float(e))


def _check_coupling(space: SearchSpace, rule: CoupleRule) -> None:
    for b, blk in enumerate(space.blocks):
        for d, w in rule.pairs:
            if d not in blk.depth_choices or w not in blk.width_choices:
                raise ValueError(f"coupling pair {(d, w)} outside the choice sets of block {b}")


def apply_couple_rule(space: SearchSpace, rule: CoupleRule) -> SearchSpace:
    """Restrict the space to the (depth, width) tuples of ``rule``."""
    _check_coupling(space, rule)
    return replace(space, coupling=rule)


def validate_path(space: SearchSpace, path: Path) -> PathCheck:
    """Check every path invariant against ``space``; never raises."""
    reasons = []
    if len(path.blocks) != space.num_blocks:
        return PathCheck(False, (f"expected {space.num_blocks} blocks, got {len(path.blocks)}",))
    for b, (blk, choice) in enumerate(zip(space.blocks, path.blocks)):
        if choice.depth not in blk.depth_choices:
            reasons.append(f"block {b}: depth {choice.depth} not in {blk.depth_choices}")
            continue
        if choice.width not in blk.width_choices:
            reasons.append(f"block {b}: width {choice.width} not in {blk.width_choices}")
        if space.coupling is not None and (choice.depth, choice.width) not in space.coupling.pairs:
            reasons.append(f"block {b}: (depth, width) {(choice.depth, choice.width)} excluded by coupling")
        n_layers = blk.layers_for_depth(choice.depth)
        if len(choice.expands) != n_layers:
            reasons.append(f"block {b}: {len(choice.expands)} expands for {n_layers} active layers")
            continue
        for l, e in enumerate(choice.expands):
            if e not in blk.expand_choices:
                reasons.append(f"block {b} layer {l}: expand {e} not in {blk.expand_choices}")
            elif (b, l, choice.width, e) in space.removed:
                reasons.append(f"block {b} layer {l}: operation (w={choice.width}, e={e}) was pruned")
    return PathCheck(not reasons, tuple(reasons))


def count_paths(space: SearchSpace, coupling: CoupleRule | None = None) -> int:
    """Exact number of paths (arbitrary-precision integer)."""
    if coupling is not None:
        space = apply_couple_rule(space, coupling)
    return math.prod(space.block_count(b) for b in range(space.num_blocks))


def _block_choices(space: SearchSpace, block: int) -> list[BlockChoice]:
    out = []
    for d, w, _, per_layer in space._block_options(block):
        for expands in itertools.product(*per_layer):
            out.append(BlockChoice(d, w, expands))
    return out


def enumerate_paths(space: SearchSpace, coupling: CoupleRule | None = None,
                    cap: int = 100_000) -> Iterator[Path]:
    """Yield every path once, in lexicographic order of choice indices.

    Raises ``ValueError`` when the space holds more than ``cap`` paths.
    """
    if coupling is not None:
        space = apply_couple_rule(space, coupling)
    total = count_paths(space)
    if total > cap:
        raise ValueError(f"space too large: {total} paths exceed cap {cap}")
    per_block = [_block_choices(space, b) for b in range(space.num_blocks)]
    for combo in itertools.product(*per_block):
        yield Path(combo)


def sample_block(space: SearchSpace, block: int, rng: np.random.Generator) -> BlockChoice:
    opts = space._block_options(block)
    total = sum(o[2] for o in opts)
    if total == 0:
        raise ValueError(f"block {block} has no valid configuration")
    k = int(rng.integers(total))
    for d, w, count, per_layer in opts:
        if k < count:
            break
        k -= count
    expands = tuple(choices[int(rng.integers(len(choices)))] for choices in per_layer)
    return BlockChoice(d, w, expands)


def sample_uniform(space: SearchSpace, rng: np.random.Generator,
                   coupling: CoupleRule | None = None) -> Path:
    """Draw one path uniformly from the (restricted) space."""
    if coupling is not None:
        space = apply_couple_rule(space, coupling)
    return Path(tuple(sample_block(space, b, rng) for b in range(space.num_blocks)))


def max_path(space: SearchSpace) -> Path:
    """Largest choice in every coordinate (ignores restrictions)."""
    return Path(tuple(
        BlockChoice(blk.depth_choices[-1], blk.width_choices[-1], (blk.expand_choices[-1],) * blk.max_layers)
        for blk in space.blocks
    ))


def min_path(space: SearchSpace) -> Path:
    return Path(tuple(
        BlockChoice(blk.depth_choices[0], blk.width_choices[0], (blk.expand_choices[0],) * blk.layer_counts[0])
        for blk in space.blocks
    ))


# construction helpers ------------------------------------------------------

def ofa_space(num_blocks: int = 4, base_channels: Sequence[int] = (256, 512, 1024, 2048),
              input_resolution: int = 224) -> SearchSpace:
    """Desk-scale analogue of the OFA ResNet space: D={0,1,2}, W={.65,.8,1}, E={.2,.25,.35}."""
    blk = BlockSpec.make((0, 1, 2), (0.65, 0.8, 1.0), (0.2, 0.25, 0.35))
    return SearchSpace((blk,) * num_blocks, tuple(base_channels[:num_blocks]), input_resolution)


def toy_space(num_blocks: int = 4, base_channels: Sequence[int] = (32, 48, 64, 96),
              depths=(0, 1, 2), widths=(0.65, 0.8, 1.0), expands=(0.2, 0.25, 0.35),
              input_channels: int = 16) -> SearchSpace:
    """Fully connected variant (kernel 1, resolution 1) matching :class:`ToySupernet`."""
    blk = BlockSpec.make(depths, widths, expands)
    return SearchSpace((blk,) * num_blocks, tuple(base_channels[:num_blocks]),
                       input_resolution=1, input_channels=input_channels, kernel_size=1)


def space_to_dict(space: SearchSpace) -> dict:
    d = {
        "blocks": [
            {
                "depth_choices": list(b.depth_choices),
                "width_choices": [format_ratio(w) for w in b.width_choices],
                "expand_choices": [format_ratio(e) for e in b.expand_choices],
                "layer_counts": list(b.layer_counts),
            }
            for b in space.blocks
        ],
        "base_channels": list(space.base_channels),
        "input_resolution": space.input_resolution,
        "input_channels": space.input_channels,
        "kernel_size": space.kernel_size,
    }
    if space.coupling is not None:
        d["coupling"] = [[dd, format_ratio(w)] for dd, w in space.coupling.pairs]
    if space.removed:
        d["removed"] = [[b, l, format_ratio(w), format_ratio(e)] for b, l, w, e in sorted(space.removed)]
    return d


def space_from_dict(d: dict) -> SearchSpace:
    blocks = []
    for b in d["blocks"]:
        depths = [int(x) for x in b["depth_choices"]]
        widths = [parse_ratio(x) for x in b["width_choices"]]
        expands = [parse_ratio(x) for x in b["expand_choices"]]
        if "layer_counts" in b:
            blocks.append(BlockSpec(tuple(depths), tuple(widths), tuple(expands), tuple(b["layer_counts"])))
        else:
            blocks.append(BlockSpec.make(depths, widths, expands, b.get("min_layers", 2)))
    coupling = None
    if d.get("coupling"):
        coupling = CoupleRule(tuple((int(x), parse_ratio(w)) for x, w in d["coupling"]))
    removed = frozenset(
        (int(b), int(l), parse_ratio(w), parse_ratio(e)) for b, l, w, e in d.get("removed", [])
    )
    return SearchSpace(
        tuple(blocks),
        tuple(d["base_channels"]),
        input_resolution=int(d.get("input_resolution", 224)),
        input_channels=int(d.get("input_channels", 3)),
        kernel_size=int(d.get("kernel_size", 3)),
        coupling=coupling,
        removed=removed,
    )


def load_space(path) -> SearchSpace:
    with open(path) as f:
        d = json.load(f)
    return space_from_dict(d.get("space", d))
