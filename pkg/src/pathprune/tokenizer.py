"""Layer-wise tokenization of paths and sinusoidal position tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .space import Path, SearchSpace, format_ratio, validate_path

SKIP = "SC"


def op_token(width: float, expand: float) -> str:
    return f"W{format_ratio(width)}_E{format_ratio(expand)}"


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    @classmethod
    def for_space(cls, space: SearchSpace) -> "Vocabulary":
        widths = sorted({w for b in space.blocks for w in b.width_choices})
        expands = sorted({e for b in space.blocks for e in b.expand_choices})
        return cls((SKIP,) + tuple(op_token(w, e) for w in widths for e in expands))

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self._index[token]

    @property
    def _index(self) -> dict[str, int]:
        # rebuilt lazily; frozen dataclass cannot hold a mutable cache field
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = {t: i for i, t in enumerate(self.tokens)}
            object.__setattr__(self, "_cache", cache)
        return cache


@dataclass(frozen=True)
class TokenSequence:
    tokens: np.ndarray
    layer_index: np.ndarray
    block_index: np.ndarray
    bucket: int


def token_strings(space: SearchSpace, path: Path) -> list[str]:
    """Per-layer tokens; block width repeated on each layer, SC for inactive slots."""
    out = []
    for blk, choice in zip(space.blocks, path.blocks):
        out += [op_token(choice.width, e) for e in choice.expands]
        out += [SKIP] * (blk.max_layers - len(choice.expands))
    return out


def block_indices(space: SearchSpace) -> np.ndarray:
    return np.concatenate([np.full(b.max_layers, i, dtype=np.int64) for i, b in enumerate(space.blocks)])


def tokenize(space: SearchSpace, path: Path, bucket: int, vocab: Vocabulary | None = None) -> TokenSequence:
    check = validate_path(space.base(), path)
    if not check:
        raise ValueError("invalid path: " + "; ".join(check.reasons))
    vocab = vocab or Vocabulary.for_space(space)
    ids = np.array([vocab.id(t) for t in token_strings(space, path)], dtype=np.int64)
    return TokenSequence(ids, np.arange(len(ids), dtype=np.int64), block_indices(space), int(bucket))


def tokenize_batch(space: SearchSpace, paths, vocab: Vocabulary) -> np.ndarray:
    """(N, L) token ids without validation; callers pass valid paths."""
    index = vocab._index
    return np.array([[index[t] for t in token_strings(space, p)] for p in paths], dtype=np.int64).reshape(
        len(paths), space.max_sequence_length)


def positional_encoding(index: int, dim: int, max_index: int) -> np.ndarray:
    """``P(l, 2i) = sin(l / 10000^(2i/max_index))``, ``P(l, 2i+1) = cos(...)``.

    The exponent is scaled by the largest index rather than by ``dim``.
    """
    if dim % 2:
        raise ValueError("dim must be even")
    if index < 0:
        raise ValueError("index must be non-negative")
    max_index = max(int(max_index), 1)
    i = np.arange(dim // 2, dtype=np.float64)
    # written as a decaying exponential: for small max_index the power
    # overflows, while its reciprocal underflows cleanly to zero
    angle = index * np.exp(-(2.0 * i / max_index) * np.log(10000.0))
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def encoding_table(indices, dim: int, max_index: int) -> np.ndarray:
    return np.stack([positional_encoding(int(i), dim, max_index) for i in indices])


def sequence_encoding(space: SearchSpace, dim: int, use_block: bool = True) -> np.ndarray:
    """Additive (L, dim) position term: layer encoding plus, optionally, block encoding."""
    n = space.max_sequence_length
    table = encoding_table(range(n), dim, n - 1)
    if use_block:
        table = table + encoding_table(block_indices(space), dim, space.num_blocks - 1)
    return table
