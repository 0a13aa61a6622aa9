"""Toy weight-sharing supernet on a synthetic regression task.

Every block starts with a linear transition from the previous block's
channels followed by relu. Each active layer is then a residual bottleneck:
``x + relu(relu(x R) M) E`` with ``R: C x H``, ``M: H x H`` and ``E: H x C``.
A path selects leading slices of the shared tensors, which are sized for the
largest configuration. The multiply-accumulate count of the backbone equals
the FLOPs model of a space built with ``toy_space``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .space import Path, SearchSpace, hidden_channels, validate_path


@dataclass(frozen=True)
class TaskConfig:
    input_dim: int = 16
    output_dim: int = 4
    teacher_hidden: int = 32
    n_train: int = 16384
    n_val: int = 512
    seed: int = 0


@dataclass(frozen=True)
class RegressionTask:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name == "train":
            return self.x_train, self.y_train
        if name == "val":
            return self.x_val, self.y_val
        raise ValueError(f"unknown split {name!r}")


def make_task(cfg: TaskConfig = TaskConfig(), dtype=np.float32) -> RegressionTask:
    """Targets from a frozen random one-hidden-layer tanh teacher, standardised per output."""
    rng = np.random.default_rng(cfg.seed)
    w1 = rng.normal(0, 1 / np.sqrt(cfg.input_dim), (cfg.input_dim, cfg.teacher_hidden))
    w2 = rng.normal(0, 1 / np.sqrt(cfg.teacher_hidden), (cfg.teacher_hidden, cfg.output_dim))
    x = rng.standard_normal((cfg.n_train + cfg.n_val, cfg.input_dim))
    y = np.tanh(x @ w1) @ w2
    y = (y - y[:cfg.n_train].mean(0)) / y[:cfg.n_train].std(0)
    x, y = x.astype(dtype), y.astype(dtype)
    return RegressionTask(x[:cfg.n_train], y[:cfg.n_train], x[cfg.n_train:], y[cfg.n_train:])


class ToySupernet:
    def __init__(self, space: SearchSpace, task: RegressionTask, seed: int = 0,
                 lr: float = 1e-3, batch_size: int = 64):
        self.space = space.base()
        if task.x_train.shape[1] != self.space.input_channels:
            raise ValueError("task input dimension must equal the space's input_channels")
        self.task = task
        self.batch_size = batch_size
        self.dtype = task.x_train.dtype
        rng = np.random.default_rng(seed)
        arrays = {}
        c_prev = self.space.input_channels
        for b, blk in enumerate(self.space.blocks):
            c_max = self.space.channels(b, blk.width_choices[-1])
            h_max = hidden_channels(c_max, blk.expand_choices[-1])
            arrays[f"b{b}.t"] = rng.normal(0, np.sqrt(2.0 / c_prev), (c_prev, c_max))
            for l in range(blk.max_layers):
                arrays[f"b{b}.l{l}.r"] = rng.normal(0, np.sqrt(2.0 / c_max), (c_max, h_max))
                arrays[f"b{b}.l{l}.m"] = rng.normal(0, np.sqrt(2.0 / h_max), (h_max, h_max))
                # small restore weights: every residual branch starts close to identity
                arrays[f"b{b}.l{l}.e"] = rng.normal(0, 0.05 / np.sqrt(h_max), (h_max, c_max))
            c_prev = c_max
        out = task.y_train.shape[1]
        arrays["head.w"] = rng.normal(0, 1 / np.sqrt(c_prev), (c_prev, out))
        arrays["head.b"] = np.zeros(out)
        self.params = {k: T.Tensor(v.astype(self.dtype), requires_grad=True, name=k) for k, v in arrays.items()}
        self._names = list(self.params)
        self.opt = T.AdamState(lr=lr)

    # slicing ----------------------------------------------------------------

    def _plan(self, path: Path):
        """Yield the (name, index) slices used by ``path`` in forward order."""
        check = validate_path(self.space, path)
        if not check:
            raise ValueError("invalid path: " + "; ".join(check.reasons))
        c_prev = self.space.input_channels
        plan = []
        for b, choice in enumerate(path.blocks):
            c = self.space.channels(b, choice.width)
            layers = []
            for l, e in enumerate(choice.expands):
                h = hidden_channels(c, e)
                layers.append(((f"b{b}.l{l}.r", np.s_[:c, :h]), (f"b{b}.l{l}.m", np.s_[:h, :h]),
                               (f"b{b}.l{l}.e", np.s_[:h, :c])))
            plan.append(((f"b{b}.t", np.s_[:c_prev, :c]), layers))
            c_prev = c
        head = (("head.w", np.s_[:c_prev, :]), ("head.b", np.s_[:]))
        return plan, head

    def regions(self, path: Path) -> dict:
        plan, head = self._plan(path)
        out = dict(head)
        for trans, layers in plan:
            out[trans[0]] = trans[1]
            for layer in layers:
                out.update(layer)
        return out

    # forward ----------------------------------------------------------------

    def _forward_tensor(self, path: Path, x: np.ndarray) -> T.Tensor:
        p = self.params
        plan, head = self._plan(path)
        h = T.Tensor(x)
        for (tname, tidx), layers in plan:
            h = T.relu(h @ T.getitem(p[tname], tidx))
            for (rn, ri), (mn, mi), (en, ei) in layers:
                a = T.relu(h @ T.getitem(p[rn], ri))
                a = T.relu(a @ T.getitem(p[mn], mi))
                h = h + a @ T.getitem(p[en], ei)
        (wn, wi), (bn, bi) = head
        return h @ T.getitem(p[wn], wi) + p[bn]

    def predict(self, path: Path, x: np.ndarray) -> np.ndarray:
        """Forward pass with plain arrays (no graph)."""
        d = {k: t.data for k, t in self.params.items()}
        plan, head = self._plan(path)
        h = x
        for (tname, tidx), layers in plan:
            h = np.maximum(h @ d[tname][tidx], 0)
            for (rn, ri), (mn, mi), (en, ei) in layers:
                a = np.maximum(h @ d[rn][ri], 0)
                a = np.maximum(a @ d[mn][mi], 0)
                h = h + a @ d[en][ei]
        (wn, wi), (bn, _) = head
        return h @ d[wn][wi] + d[bn]

    def evaluate(self, path: Path, split: str = "val") -> float:
        """Mean squared error of the sliced sub-network on a data split."""
        x, y = self.task.split(split)
        err = self.predict(path, x) - y
        return float(np.mean(err.astype(np.float64) ** 2))

    def step(self, path: Path, idx: np.ndarray) -> float:
        """One Adam step on minibatch rows ``idx``; only ``path``'s slices change."""
        x, y = self.task.x_train[idx], self.task.y_train[idx]
        params = [self.params[n] for n in self._names]
        T.zero_grad(params)
        pred = self._forward_tensor(path, x)
        loss = T.mean(T.square(pred - y))
        T.backward(loss)
        regions = self.regions(path)
        T.adam_step(params, [T.grad_or_zeros(p) for p in params], self.opt,
                    regions=[regions.get(n) for n in self._names])
        return loss.item()

    def minibatches(self, rng: np.random.Generator):
        order = rng.permutation(len(self.task.x_train))
        for s in range(0, len(order), self.batch_size):
            yield order[s:s + self.batch_size]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def save(self, directory, extra: dict | None = None) -> str:
        meta = {"kind": "toy_supernet", "lr": self.opt.lr, "batch_size": self.batch_size}
        meta.update(extra or {})
        return T.save_checkpoint(directory, self.state_dict(), meta)

    def backbone_macs(self, path: Path) -> int:
        """Multiply-accumulates of the backbone for one input row (head excluded)."""
        plan, _ = self._plan(path)
        total = 0
        for (_, (ti, tj)), layers in plan:
            total += ti.stop * tj.stop
            for (_, (ri, rj)), (_, (mi, mj)), (_, (ei, ej)) in layers:
                total += ri.stop * rj.stop + mi.stop * mj.stop + ei.stop * ej.stop
        return total
