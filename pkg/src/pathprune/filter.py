"""FLOPs-conditioned transformer that scores paths.

Forward pass: token embedding + layer position table (+ block position table)
-> encoder layers (multi-head self-attention and a feed-forward sublayer, each
followed by a residual add and layer norm) -> mean over positions -> concat
the bucket embedding -> FC -> relu -> FC -> sigmoid.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .flops import BucketSpec, path_bucket
from .space import Path, SearchSpace, space_from_dict, space_to_dict
from .tokenizer import Vocabulary, sequence_encoding, tokenize_batch


@dataclass(frozen=True)
class FilterConfig:
    dim: int = 128
    heads: int = 4
    layers: int = 3
    ff_dim: int = 128
    head_dim: int = 128
    use_bucket: bool = True
    use_block_pe: bool = True
    dtype: str = "float32"
    ln_eps: float = 1e-5


class PathFilter:
    """Scoring model ``g(a; theta)`` tied to one search space and bucket spec."""

    def __init__(self, space: SearchSpace, buckets: BucketSpec, cfg: FilterConfig = FilterConfig(),
                 seed: int = 0, vocab: Vocabulary | None = None):
        if cfg.dim % cfg.heads or cfg.dim % 2:
            raise ValueError("dim must be even and divisible by heads")
        self.space = space.base()
        self.buckets = buckets
        self.cfg = cfg
        self.vocab = vocab or Vocabulary.for_space(space)
        self.dtype = np.dtype(cfg.dtype)
        self.position = sequence_encoding(self.space, cfg.dim, cfg.use_block_pe).astype(self.dtype)
        self.params = self._init_params(np.random.default_rng(seed))

    # parameters -------------------------------------------------------------

    def _init_params(self, rng) -> dict[str, T.Tensor]:
        c, dt = self.cfg, self.dtype
        arrays = {
            "token_emb": T.init_embedding(rng, len(self.vocab), c.dim, dt),
            "bucket_emb": T.init_embedding(rng, self.buckets.num_buckets, c.dim, dt),
        }
        for i in range(c.layers):
            for n in ("q", "k", "v", "o"):
                arrays[f"enc{i}.w{n}"] = T.init_linear(rng, c.dim, c.dim, dt)
                arrays[f"enc{i}.b{n}"] = np.zeros(c.dim, dt)
            arrays[f"enc{i}.ln1_g"] = np.ones(c.dim, dt)
            arrays[f"enc{i}.ln1_b"] = np.zeros(c.dim, dt)
            arrays[f"enc{i}.ff1_w"] = T.init_linear(rng, c.dim, c.ff_dim, dt)
            arrays[f"enc{i}.ff1_b"] = np.zeros(c.ff_dim, dt)
            arrays[f"enc{i}.ff2_w"] = T.init_linear(rng, c.ff_dim, c.dim, dt)
            arrays[f"enc{i}.ff2_b"] = np.zeros(c.dim, dt)
            arrays[f"enc{i}.ln2_g"] = np.ones(c.dim, dt)
            arrays[f"enc{i}.ln2_b"] = np.zeros(c.dim, dt)
        # head input is pooled sequence + bucket slot; the slot is zeros when
        # bucket conditioning is off so both variants share one layout
        arrays["head1_w"] = T.init_linear(rng, 2 * c.dim, c.head_dim, dt)
        arrays["head1_b"] = np.zeros(c.head_dim, dt)
        arrays["head2_w"] = T.init_linear(rng, c.head_dim, 1, dt)
        arrays["head2_b"] = np.zeros(1, dt)
        return {k: T.Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}

    def parameters(self) -> list[T.Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ValueError("parameter names do not match the model")
        for k, arr in state.items():
            if arr.shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}")
            self.params[k].data = np.array(arr, dtype=self.dtype)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # forward ----------------------------------------------------------------

    def _encoder(self, x: T.Tensor, i: int) -> T.Tensor:
        p, c = self.params, self.cfg
        n, L, d = x.shape
        h, dh = c.heads, c.dim // c.heads

        def heads(t):
            return t.reshape(n, L, h, dh).transpose(0, 2, 1, 3)

        q = heads(x @ p[f"enc{i}.wq"] + p[f"enc{i}.bq"])
        k = heads(x @ p[f"enc{i}.wk"] + p[f"enc{i}.bk"])
        v = heads(x @ p[f"enc{i}.wv"] + p[f"enc{i}.bv"])
        att = T.softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh)), axis=-1)
        o = (att @ v).transpose(0, 2, 1, 3).reshape(n, L, d)
        o = o @ p[f"enc{i}.wo"] + p[f"enc{i}.bo"]
        x = T.layer_norm(x + o, c.ln_eps) * p[f"enc{i}.ln1_g"] + p[f"enc{i}.ln1_b"]
        f = T.relu(x @ p[f"enc{i}.ff1_w"] + p[f"enc{i}.ff1_b"])
        f = f @ p[f"enc{i}.ff2_w"] + p[f"enc{i}.ff2_b"]
        return T.layer_norm(x + f, c.ln_eps) * p[f"enc{i}.ln2_g"] + p[f"enc{i}.ln2_b"]

    def forward(self, tokens: np.ndarray, buckets: np.ndarray) -> T.Tensor:
        """Scores, shape (N,), for token ids (N, L) and bucket indices (N,)."""
        tokens = np.asarray(tokens)
        buckets = np.asarray(buckets)
        if tokens.ndim != 2 or tokens.shape[1] != self.position.shape[0]:
            raise ValueError(f"expected tokens of shape (N, {self.position.shape[0]})")
        if tokens.size and tokens.max() >= len(self.vocab):
            raise ValueError("token id outside the vocabulary")
        p = self.params
        x = T.embedding(p["token_emb"], tokens) + self.position
        for i in range(self.cfg.layers):
            x = self._encoder(x, i)
        pooled = x.mean(axis=1)
        if self.cfg.use_bucket:
            cond = T.embedding(p["bucket_emb"], buckets)
        else:
            cond = T.Tensor(np.zeros((len(tokens), self.cfg.dim), self.dtype))
        z = T.concat([pooled, cond], axis=-1)
        z = T.relu(z @ p["head1_w"] + p["head1_b"])
        z = z @ p["head2_w"] + p["head2_b"]
        return T.sigmoid(z).reshape(len(tokens))

    # convenience --------------------------------------------------------------

    def encode(self, paths) -> tuple[np.ndarray, np.ndarray]:
        tokens = tokenize_batch(self.space, paths, self.vocab)
        buckets = np.array([path_bucket(self.space, self.buckets, p) for p in paths], dtype=np.int64)
        return tokens, buckets

    def score_tokens(self, tokens: np.ndarray, buckets: np.ndarray, chunk: int = 1024) -> np.ndarray:
        out = [self.forward(tokens[i:i + chunk], buckets[i:i + chunk]).data
               for i in range(0, len(tokens), chunk)]
        return np.concatenate(out).astype(np.float64) if out else np.zeros(0)

    def score_paths(self, paths, buckets=None) -> np.ndarray:
        paths = list(paths)
        if not paths:
            return np.zeros(0)
        tokens, auto = self.encode(paths)
        return self.score_tokens(tokens, auto if buckets is None else np.asarray(buckets))

    def score(self, path: Path, bucket: int | None = None) -> float:
        return float(self.score_paths([path], None if bucket is None else [bucket])[0])

    def __call__(self, paths) -> np.ndarray:
        return self.score_paths(paths)

    def copy(self) -> "PathFilter":
        other = PathFilter.__new__(PathFilter)
        other.__dict__.update(self.__dict__)
        other.params = {k: T.Tensor(p.data.copy(), requires_grad=True, name=k) for k, p in self.params.items()}
        return other

    # persistence ----------------------------------------------------------

    def meta(self) -> dict:
        return {
            "kind": "path_filter",
            "config": asdict(self.cfg),
            "vocabulary": list(self.vocab.tokens),
            "buckets": self.buckets.to_dict(),
            "space": space_to_dict(self.space),
            "vocab_hash": vocab_hash(self.vocab),
            "bucket_hash": bucket_hash(self.buckets),
            "num_parameters": self.num_parameters(),
        }

    def save(self, directory, extra: dict | None = None) -> str:
        meta = self.meta()
        meta.update(extra or {})
        return T.save_checkpoint(directory, self.state_dict(), meta)

    @classmethod
    def load(cls, directory) -> "PathFilter":
        arrays, meta = T.load_checkpoint(directory)
        if meta.get("kind") != "path_filter":
            raise ValueError(f"{directory} is not a path filter checkpoint")
        space = space_from_dict(meta["space"])
        vocab = Vocabulary(tuple(meta["vocabulary"]))
        if vocab != Vocabulary.for_space(space):
            raise ValueError("checkpoint vocabulary does not match its search space")
        model = cls(space, BucketSpec.from_dict(meta["buckets"]), FilterConfig(**meta["config"]), vocab=vocab)
        model.load_state_dict(arrays)
        return model


def vocab_hash(vocab: Vocabulary) -> str:
    return hashlib.sha256(json.dumps(list(vocab.tokens)).encode()).hexdigest()[:16]


def bucket_hash(spec: BucketSpec) -> str:
    return hashlib.sha256(json.dumps(spec.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


class ConstantScorer:
    """Scorer returning one value for every path (test double and degenerate proxy)."""

    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, paths) -> np.ndarray:
        return np.full(len(list(paths)), self.value)
