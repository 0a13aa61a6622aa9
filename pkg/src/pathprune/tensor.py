"""Small reverse-mode autodiff over numpy arrays.

Every primitive returns a :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to one gradient per parent. Calling
:func:`backward` on a scalar walks the recorded graph in reverse topological
order and stores ``.grad`` on every leaf that requires gradients.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

FORMAT_VERSION = 1


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "name")
    # make ``ndarray <op> Tensor`` dispatch to the reflected Tensor operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (),
                 backward_fn: Callable | None = None, op: str = "", name: str = ""):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}{', grad' if self.requires_grad else ''})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __neg__ = lambda self: mul(self, -1.0)
    __matmul__ = lambda self, o: matmul(self, o)
    __getitem__ = lambda self, idx: getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, fn, op) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, fn, op)
    return Tensor(data, op=op)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0).astype(a.dtype, copy=False), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype, copy=False)
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


# linear algebra ------------------------------------------------------------

def _mm(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x @ w for a 2-D ``w``, folding leading dims of ``x`` into one GEMM."""
    if x.ndim == 2:
        return x @ w
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(x.shape[:-1] + (w.shape[-1],))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul needs operands with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"shape mismatch in matmul: {a.shape} @ {b.shape}")
    shared = b.ndim == 2

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _mm(g, b.data.T) if shared else _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if shared:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _node(_mm(a.data, b.data) if shared else a.data @ b.data, (a, b), fn, "matmul")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)


def getitem(a, idx) -> Tensor:
    """Slice or gather; the gradient lands only on the selected entries."""
    a = as_tensor(a)

    def fn(g):
        out = np.zeros_like(a.data)
        if _is_basic_index(idx):
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _node(a.data[idx], (a,), fn, "getitem")


def embedding(table, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError("embedding index out of range")

    def fn(g):
        flat = ids.reshape(-1)
        g2 = g.reshape(flat.size, -1)
        if table.shape[0] <= 4096:
            onehot = np.zeros((flat.size, table.shape[0]), dtype=g.dtype)
            onehot[np.arange(flat.size), flat] = 1
            return ((onehot.T @ g2).reshape(table.shape),)
        out = np.zeros_like(table.data)
        np.add.at(out, ids, g)
        return (out,)

    return _node(table.data[ids], (table,), fn, "embedding")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


# reductions ----------------------------------------------------------------

def _expand(g, shape, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,),
                 lambda g: (np.array(_expand(g, a.shape, axis, keepdims)),), "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[x] for x in np.atleast_1d(axis)])
    return _node(a.data.mean(axis=axis, keepdims=keepdims), (a,),
                 lambda g: (np.array(_expand(g, a.shape, axis, keepdims)) / n,), "mean")


def tmax(a, axis=None, keepdims=False) -> Tensor:
    """Maximum; tied maxima share the gradient equally."""
    a = as_tensor(a)
    out = a.data.max(axis=axis, keepdims=True)
    mask = (a.data == out).astype(a.dtype)
    mask /= mask.sum(axis=axis, keepdims=True)
    value = out if keepdims else (out.reshape(()) if axis is None else np.squeeze(out, axis))
    return _node(value, (a,), lambda g: (mask * _expand(g, a.shape, axis, keepdims),), "max")


# normalisation -------------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _node(y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),), "softmax")


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit variance (no affine part)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def fn(g):
        return (inv * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True)),)

    return _node(xhat, (a,), fn, "layer_norm")


# backward ------------------------------------------------------------------

@dataclass
class Tape:
    """Nodes reachable from a loss, in topological order (parents first)."""

    nodes: list[Tensor]

    @classmethod
    def record(cls, loss: Tensor) -> "Tape":
        order, seen = [], set()
        stack = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def backward(self, loss: Tensor) -> None:
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node.parents, node.backward_fn(g)):
                if not p.requires_grad or pg is None:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else prev + pg


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    tape = Tape.record(loss)
    tape.backward(loss)
    return tape


def zero_grad(params) -> None:
    for p in params:
        p.grad = None


def grad_or_zeros(p: Tensor) -> np.ndarray:
    return np.zeros_like(p.data) if p.grad is None else p.grad


# optimisation --------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState,
              regions: Sequence | None = None) -> AdamState:
    """Bias-corrected Adam update, in place.

    ``regions`` optionally restricts each parameter's update (and its moment
    accumulators) to an index expression, leaving all other entries untouched.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ValueError(f"shape mismatch for parameter {i}: {g.shape} vs {p.shape}")
        r = Ellipsis if regions is None else regions[i]
        if r is None:
            continue
        m, v = state.m[i], state.v[i]
        gr = g[r]
        m[r] = state.beta1 * m[r] + (1.0 - state.beta1) * gr
        v[r] = state.beta2 * v[r] + (1.0 - state.beta2) * gr * gr
        p.data[r] -= (state.lr * (m[r] / c1) / (np.sqrt(v[r] / c2) + state.eps)).astype(p.dtype, copy=False)
    return state


# initialisation ------------------------------------------------------------

def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def init_embedding(rng: np.random.Generator, rows: int, dim: int, dtype=np.float64) -> np.ndarray:
    return rng.normal(0.0, 0.02, size=(rows, dim)).astype(dtype)


# checkpoints ---------------------------------------------------------------

def _sha256(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def save_checkpoint(directory, arrays: dict[str, np.ndarray], meta: dict) -> str:
    """Write ``manifest.json`` plus one raw little-endian file per array.

    Returns the manifest's content hash.
    """
    os.makedirs(directory, exist_ok=True)
    entries = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        payload = arr.astype(dtype, copy=False).tobytes()
        fname = f"{name}.bin"
        with open(os.path.join(directory, fname), "wb") as f:
            f.write(payload)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype.str,
                        "file": fname, "sha256": _sha256(payload)})
    manifest = {"format_version": FORMAT_VERSION, "meta": meta, "params": entries}
    text = json.dumps(manifest, sort_keys=True, indent=1)
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        f.write(text)
    return _sha256(text.encode())


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    with open(os.path.join(directory, "manifest.json")) as f:
        manifest = json.load(f)
    arrays = {}
    for e in manifest["params"]:
        with open(os.path.join(directory, e["file"]), "rb") as f:
            payload = f.read()
        if _sha256(payload) != e["sha256"]:
            raise ValueError(f"checksum mismatch for {e['name']}")
        arr = np.frombuffer(payload, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return arrays, manifest["meta"]
