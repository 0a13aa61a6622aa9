import math

import numpy as np
import pytest

from pathprune.space import BlockChoice, Path, max_path, min_path, sample_uniform, toy_space
from pathprune.tokenizer import (
    SKIP, Vocabulary, block_indices, positional_encoding, sequence_encoding, token_strings, tokenize,
    tokenize_batch,
)


def test_vocabulary_layout(space):
    vocab = Vocabulary.for_space(space)
    assert len(vocab) == 1 + 9
    assert vocab.tokens[0] == SKIP
    assert vocab.tokens[1] == "W0.65_E0.2"
    assert vocab.tokens[-1] == "W1.0_E0.35"


def test_skip_padding_and_layout(space):
    p = Path((BlockChoice(0, 0.8, (0.2, 0.35)),) + max_path(space).blocks[1:])
    toks = token_strings(space, p)
    assert len(toks) == 16
    assert toks[:4] == ["W0.8_E0.2", "W0.8_E0.35", SKIP, SKIP]
    assert toks[4:8] == ["W1.0_E0.35"] * 4
    assert list(block_indices(space)) == [0] * 4 + [1] * 4 + [2] * 4 + [3] * 4


def test_tokenize_matches_batch(space, buckets, rng):
    vocab = Vocabulary.for_space(space)
    paths = [sample_uniform(space, rng) for _ in range(20)]
    batch = tokenize_batch(space, paths, vocab)
    for row, p in zip(batch, paths):
        seq = tokenize(space, p, 3, vocab)
        assert np.array_equal(seq.tokens, row)
        assert seq.bucket == 3
        assert list(seq.layer_index) == list(range(16))


def test_tokenize_rejects_invalid(space):
    with pytest.raises(ValueError):
        tokenize(space, Path(min_path(space).blocks[:3]), 0)


def test_distinct_paths_distinct_tokens(small_space):
    vocab = Vocabulary.for_space(small_space)
    from pathprune.space import enumerate_paths

    paths = list(enumerate_paths(small_space))
    rows = {tuple(r) for r in tokenize_batch(small_space, paths, vocab)}
    assert len(rows) == len(paths)


def test_positional_encoding_literal_formula():
    dim, max_index = 8, 15
    for l in (0, 1, 7, 15):
        pe = positional_encoding(l, dim, max_index)
        for i in range(dim // 2):
            denom = 10000.0 ** (2 * i / max_index)
            assert pe[2 * i] == pytest.approx(math.sin(l / denom), abs=1e-12)
            assert pe[2 * i + 1] == pytest.approx(math.cos(l / denom), abs=1e-12)


def test_positional_encoding_small_max_index_is_finite():
    pe = positional_encoding(3, 128, 3)
    assert np.all(np.isfinite(pe))
    # very high frequencies collapse to angle 0: sin 0, cos 1
    assert pe[-2] == pytest.approx(0.0, abs=1e-12) and pe[-1] == pytest.approx(1.0)


def test_positional_encoding_errors():
    with pytest.raises(ValueError):
        positional_encoding(0, 7, 3)
    with pytest.raises(ValueError):
        positional_encoding(-1, 8, 3)


def test_sequence_encoding_block_term(space):
    with_block = sequence_encoding(space, 16, True)
    without = sequence_encoding(space, 16, False)
    diff = with_block - without
    assert with_block.shape == (16, 16)
    # the block term is shared by every layer of one block
    assert np.allclose(diff[0], diff[3]) and not np.allclose(diff[3], diff[4])
    assert np.allclose(diff[0], positional_encoding(0, 16, 3))


def test_single_block_space_encoding():
    sp = toy_space(num_blocks=1)
    assert np.all(np.isfinite(sequence_encoding(sp, 8)))
