import numpy as np
import pytest

from pathprune import tensor as T


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def check(build, *shapes, seed=0, positive=False):
    """Compare autodiff and central differences for sum(build(*leaves) * fixed weights)."""
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s) for s in shapes]
    if positive:
        arrays = [np.abs(a) + 0.5 for a in arrays]
    leaves = [T.Tensor(a, requires_grad=True) for a in arrays]
    out = build(*leaves)
    w = rng.standard_normal(out.shape)
    T.backward(T.tsum(out * w))

    def value():
        return float(np.sum(build(*[T.Tensor(a) for a in arrays]).data * w))

    for leaf, arr in zip(leaves, arrays):
        assert np.allclose(leaf.grad, numeric_grad(value, arr), rtol=1e-5, atol=1e-7)


def test_add_sub_mul_broadcast():
    check(lambda a, b: a + b, (3, 4), (4,))
    check(lambda a, b: a - b, (3, 1), (1, 4))
    check(lambda a, b: a * b, (2, 3, 4), (3, 1))


def test_unary():
    check(lambda a: T.relu(a), (5, 3))
    check(lambda a: T.sigmoid(a), (5, 3))
    check(lambda a: T.square(a), (4,))
    check(lambda a: -a, (4,))


def test_matmul_variants():
    check(lambda a, b: a @ b, (3, 4), (4, 5))
    check(lambda a, b: a @ b, (2, 3, 4), (4, 5))
    check(lambda a, b: a @ b, (2, 3, 4), (2, 4, 5))


def test_reductions():
    check(lambda a: T.tsum(a, axis=1), (3, 4))
    check(lambda a: T.mean(a, axis=0, keepdims=True), (3, 4))
    check(lambda a: T.tmax(a, axis=-1), (3, 4))
    check(lambda a: a.mean(), (3, 4))


def test_shape_ops():
    check(lambda a: a.reshape(6, 2), (3, 4))
    check(lambda a: a.transpose(1, 0, 2), (2, 3, 4))
    check(lambda a: a[1:, ::2], (3, 4))
    check(lambda a: T.getitem(a, np.array([0, 2, 2])), (3, 4))
    check(lambda a, b: T.concat([a, b], axis=-1), (3, 2), (3, 4))


def test_softmax_and_layer_norm():
    check(lambda a: T.softmax(a, axis=-1), (3, 5))
    check(lambda a: T.layer_norm(a), (3, 6))


def test_embedding_accumulates_repeated_rows():
    ids = np.array([[0, 2, 2], [1, 2, 0]])
    check(lambda t: T.embedding(t, ids), (4, 3))
    table = T.Tensor(np.zeros((4, 3)), requires_grad=True)
    T.backward(T.tsum(T.embedding(table, ids)))
    assert table.grad[2].tolist() == [3.0, 3.0, 3.0]
    assert table.grad[3].tolist() == [0.0, 0.0, 0.0]


def test_shared_subexpression_gradients_accumulate():
    x = T.Tensor(np.array([2.0]), requires_grad=True)
    y = x * x + x  # dy/dx = 2x + 1
    T.backward(T.tsum(y))
    assert x.grad.tolist() == [5.0]


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        T.backward(T.Tensor(np.ones(3), requires_grad=True) * 2.0)


def test_sigmoid_is_stable():
    out = T.sigmoid(T.Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
    assert np.all(np.isfinite(out)) and out.tolist() == [0.0, 0.5, 1.0]


def test_adam_single_step_by_hand():
    p = T.Tensor(np.array([1.0, -2.0]), requires_grad=True)
    g = np.array([0.5, -0.1])
    state = T.AdamState(lr=0.1)
    T.adam_step([p], [g], state)
    # step 1: m = 0.1 g, v = 0.001 g^2, bias-corrected m/c1 = g, v/c2 = g^2 -> update lr * sign(g)
    expected = np.array([1.0, -2.0]) - 0.1 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p.data, expected, rtol=0, atol=1e-12)
    assert state.step == 1


def test_adam_defaults():
    s = T.AdamState()
    assert (s.lr, s.beta1, s.beta2, s.eps) == (1e-3, 0.9, 0.999, 1e-8)


def test_adam_regions_leave_rest_untouched():
    p = T.Tensor(np.ones((3, 3)), requires_grad=True)
    q = T.Tensor(np.ones(2), requires_grad=True)
    state = T.AdamState()
    T.adam_step([p, q], [np.ones((3, 3)), np.ones(2)], state, regions=[(slice(0, 2), slice(0, 1)), None])
    assert np.all(p.data[:2, 0] < 1) and np.all(p.data[2] == 1) and np.all(p.data[:, 1:] == 1)
    assert np.all(q.data == 1)
    assert np.all(state.m[0][2] == 0)


def test_checkpoint_round_trip_and_tamper(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5, -2.0])}
    h1 = T.save_checkpoint(tmp_path / "c", arrays, {"k": 1})
    loaded, meta = T.load_checkpoint(tmp_path / "c")
    assert meta == {"k": 1}
    for k, v in arrays.items():
        assert loaded[k].dtype == v.dtype and np.array_equal(loaded[k], v)
    assert T.save_checkpoint(tmp_path / "d", arrays, {"k": 1}) == h1
    (tmp_path / "c" / "a.bin").write_bytes(b"\0" * 24)
    with pytest.raises(ValueError, match="checksum"):
        T.load_checkpoint(tmp_path / "c")
