import gc
import weakref

import numpy as np
import pytest

from pyvolatt.errors import ConfigurationError, ContractError, DimensionError, NumericError
from pyvolatt.tensor import (
    Tape,
    Tensor,
    backward,
    get_default_dtype,
    load_tensor,
    ops,
    save_tensor,
    set_default_dtype,
)


def _leaf(rng, shape):
    return Tensor(rng.uniform(-1, 1, size=shape), requires_grad=True)


def test_conv2d_k1_matches_matmul():
    """A 1×1 convolution is a matmul over the flattened spatial axis."""
    rng = np.random.default_rng(0)
    for _ in range(200):
        c_in, c_out = rng.integers(1, 5, size=2)
        h, w = rng.integers(1, 6, size=2)
        x = rng.normal(size=(c_in, h, w))
        k = rng.normal(size=(c_out, c_in, 1, 1))
        conv = ops.conv2d(Tensor(x), Tensor(k)).data
        oracle = (k.reshape(c_out, c_in) @ x.reshape(c_in, -1)).reshape(c_out, h, w)
        assert np.max(np.abs(conv - oracle)) <= 1e-12, "conv2d k=1 differs from matmul"


def test_conv2d_k3_matches_loop():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 5, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out = ops.conv2d(Tensor(x), Tensor(w), bias=Tensor(b)).data

    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    oracle = np.zeros((3, 5, 6))
    for o in range(3):
        for i in range(5):
            for j in range(6):
                oracle[o, i, j] = np.sum(xp[:, i : i + 3, j : j + 3] * w[o]) + b[o]
    assert np.allclose(out, oracle, atol=1e-12), "conv2d k=3 differs from the loop oracle"


def test_conv2d_rejects_even_kernel():
    with pytest.raises(ConfigurationError):
        ops.conv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 2, 2))))


def test_channel_pool_matches_loop():
    rng = np.random.default_rng(2)
    for _ in range(200):
        c, h, w = rng.integers(1, 5, size=3)
        x = rng.normal(size=(c, h, w))
        out = ops.channel_pool(Tensor(x)).data
        for i in range(h):
            for j in range(w):
                assert out[0, i, j] == max(x[:, i, j]), "channel max differs"
                assert abs(out[1, i, j] - np.mean(x[:, i, j])) <= 1e-12, "channel mean differs"


def test_channel_pool_tie_routes_to_lowest_channel():
    x = Tensor(np.ones((3, 1, 1)), requires_grad=True)
    with Tape() as tape:
        y = ops.sum(ops.select(ops.channel_pool(x), 0))
    tape.backward(y)
    assert np.array_equal(x.grad.reshape(-1), [1.0, 0.0, 0.0]), f"tie gradient {x.grad.ravel()}"


def test_softmax_sums_to_one_and_is_stable():
    x = Tensor([1000.0, 1000.0, 999.0])
    y = ops.softmax(x).data
    assert abs(y.sum() - 1.0) <= 1e-12, f"softmax sums to {y.sum()}"
    assert y[0] == y[1] > y[2], "softmax ordering broken"


def test_sigmoid_in_open_interval():
    y = ops.sigmoid(Tensor([-30.0, 0.0, 30.0])).data
    assert np.all((y > 0) & (y < 1)), f"sigmoid left (0, 1): {y}"
    assert y[1] == 0.5


def test_mul_broadcast_shapes():
    x = Tensor(np.ones((2, 3, 4)))
    assert ops.mul_broadcast(x, Tensor(np.full((2, 1, 1), 0.5))).shape == (2, 3, 4)
    assert ops.mul_broadcast(x, Tensor(np.full((1, 3, 4), 0.5))).shape == (2, 3, 4)
    with pytest.raises(DimensionError):
        ops.mul_broadcast(x, Tensor(np.ones((2, 3, 1))))


def test_matmul_dimension_error_names_shapes():
    with pytest.raises(DimensionError) as info:
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    assert "(2, 3)" in str(info.value) and "(4, 2)" in str(info.value)


def test_tensor_rejects_non_finite():
    with pytest.raises(NumericError):
        Tensor([1.0, np.nan])


def test_softmax_non_finite_names_op():
    t = Tensor._wrap(np.array([1.0, np.inf]))
    with pytest.raises(NumericError) as info:
        ops.softmax(t)
    assert info.value.op == "softmax"


def test_backward_matches_manual_gradient():
    rng = np.random.default_rng(3)
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (4, 2))
    with Tape():
        loss = ops.sum(ops.matmul(a, b))
    backward(loss)
    assert np.allclose(a.grad, np.ones((3, 2)) @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ np.ones((3, 2)))


def test_gradients_accumulate():
    x = Tensor([2.0], requires_grad=True)
    for _ in range(2):
        with Tape() as tape:
            y = ops.sum(ops.mul(x, x))
        tape.backward(y)
    assert x.grad[0] == 8.0, f"accumulated gradient {x.grad[0]} != 2 * 4"


def test_reused_tensor_gets_both_paths():
    x = Tensor([3.0], requires_grad=True)
    with Tape() as tape:
        y = ops.sum(ops.add(x, ops.scale(x, 2.0)))
    tape.backward(y)
    assert x.grad[0] == 3.0


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = ops.relu(x)
    with pytest.raises(ContractError):
        tape.backward(y)


def test_backward_on_empty_tape():
    with Tape() as tape:
        pass
    with pytest.raises(ContractError):
        tape.backward(Tensor(1.0, requires_grad=True))


def test_ops_outside_tape_are_not_recorded():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ops.sum(ops.relu(x))
    assert not y.requires_grad, "an op outside a tape was recorded"
    with pytest.raises(ContractError):
        backward(y)


def test_tape_records_in_execution_order():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        ops.sum(ops.sigmoid(ops.relu(x)))
    assert [f.name for f in tape.records] == ["relu", "sigmoid", "sum"]


def test_bce_with_logits_matches_formula():
    z = np.array([-2.0, 0.0, 3.0])
    t = np.array([0.0, 1.0, 1.0])
    loss = ops.bce_with_logits(Tensor(z), t).item()
    p = 1 / (1 + np.exp(-z))
    expected = -np.mean(t * np.log(p) + (1 - t) * np.log(1 - p))
    assert abs(loss - expected) <= 1e-12, f"bce {loss} != {expected}"


def test_stack_and_select_roundtrip():
    rng = np.random.default_rng(4)
    maps = [Tensor(rng.normal(size=(2, 3))) for _ in range(3)]
    stacked = ops.stack(maps)
    assert stacked.shape == (3, 2, 3)
    for k in range(3):
        assert np.array_equal(ops.select(stacked, k).data, maps[k].data)


def test_save_load_tensor(tmp_path):
    rng = np.random.default_rng(5)
    t = Tensor(rng.normal(size=(2, 3, 4)))
    path = str(tmp_path / "t.bin")
    save_tensor(path, t)
    loaded = load_tensor(path)
    assert np.array_equal(loaded.data, t.data)
    assert (tmp_path / "t.bin.json").exists(), "sidecar missing"
    assert (tmp_path / "t.bin").stat().st_size == 2 * 3 * 4 * 8


def test_default_dtype_switch():
    try:
        set_default_dtype(np.float32)
        assert Tensor([1.0, 2.0]).data.dtype == np.float32
        assert get_default_dtype() is np.float32
        with pytest.raises(ConfigurationError):
            set_default_dtype(np.int32)
    finally:
        set_default_dtype(np.float64)
    assert Tensor([1.0]).data.dtype == np.float64


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(6)
    for _ in range(50):
        m, k, n = rng.integers(1, 5, size=3)
        a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
        out = ops.matmul(Tensor(a), Tensor(b)).data
        oracle = np.zeros((m, n))
        for i in range(m):
            for j in range(n):
                for p in range(k):
                    oracle[i, j] += a[i, p] * b[p, j]
        assert np.max(np.abs(out - oracle)) <= 1e-12, "matmul differs from the loop oracle"


def test_matmul_examples():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ops.matmul(a, Tensor(np.eye(2))).data, a.data)
    assert ops.matmul(a, Tensor([[1.0], [1.0]])).data.ravel().tolist() == [3.0, 7.0]


def test_global_avg_pool_matches_double_sum():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3, 4, 5))
    out = ops.global_avg_pool(Tensor(x)).data
    for c in range(3):
        total = 0.0
        for i in range(4):
            for j in range(5):
                total += x[c, i, j]
        assert abs(out[c] - total / 20) <= 1e-12


def test_softmax_uniform_and_naive_oracle():
    assert np.allclose(ops.softmax(Tensor([0.0, 0.0, 0.0])).data, 1 / 3, atol=1e-15)
    rng = np.random.default_rng(8)
    for _ in range(100):
        x = rng.normal(scale=3.0, size=rng.integers(1, 10))
        naive = np.exp(x) / np.sum(np.exp(x))
        assert np.max(np.abs(ops.softmax(Tensor(x)).data - naive)) <= 1e-12


def test_softmax_permutation_equivariance():
    rng = np.random.default_rng(9)
    x = rng.normal(size=7)
    perm = rng.permutation(7)
    assert np.allclose(ops.softmax(Tensor(x[perm])).data, ops.softmax(Tensor(x)).data[perm], atol=1e-15)


def test_sigmoid_symmetry():
    x = np.random.default_rng(10).normal(scale=5.0, size=100)
    total = ops.sigmoid(Tensor(x)).data + ops.sigmoid(Tensor(-x)).data
    assert np.max(np.abs(total - 1.0)) <= 1e-12


def test_mul_broadcast_matches_loop():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(3, 4, 5))
    channel = rng.uniform(size=(3, 1, 1))
    spatial = rng.uniform(size=(1, 4, 5))
    by_channel = ops.mul_broadcast(Tensor(x), Tensor(channel)).data
    by_pixel = ops.mul_broadcast(Tensor(x), Tensor(spatial)).data
    for c in range(3):
        for i in range(4):
            for j in range(5):
                assert by_channel[c, i, j] == x[c, i, j] * channel[c, 0, 0]
                assert by_pixel[c, i, j] == x[c, i, j] * spatial[0, i, j]
    assert not np.any(ops.mul_broadcast(Tensor(x), Tensor(np.zeros((3, 1, 1)))).data)


def test_same_seed_runs_are_bit_identical():
    def run():
        rng = np.random.default_rng(12)
        x = _leaf(rng, (2, 6, 6))
        w = _leaf(rng, (3, 2, 3, 3))
        with Tape() as tape:
            y = ops.conv2d(x, w)
            gate = ops.reshape(ops.select(ops.channel_pool(y), 0), (1, 6, 6))
            loss = ops.sum(ops.mul_broadcast(y, ops.sigmoid(gate)))
        tape.backward(loss)
        return y.data, x.grad, w.grad

    for first, second in zip(run(), run()):
        assert np.array_equal(first, second)


def test_backward_releases_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    gc.disable()
    try:
        with Tape() as tape:
            loss = ops.sum(ops.relu(x))
        tape.backward(loss)
        assert len(tape) == 0, "records kept after backward"
        with pytest.raises(ContractError):
            backward(loss)
        alive = weakref.ref(tape)
        del tape, loss
        assert alive() is None, "tape outlives its last reference"
    finally:
        gc.enable()


if __name__ == "__main__":
    test_conv2d_k1_matches_matmul()
    test_channel_pool_matches_loop()
