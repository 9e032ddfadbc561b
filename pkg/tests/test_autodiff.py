import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import logsumexp, softmax

from src.autodiff import (Adam, Mlp, Tensor, concat, input_gradient, load_checkpoint, polyak_update,
                          save_checkpoint, value_and_input_gradient)
from src.error import DataLoadError, ShapeError


def squared_output(net, x):
    return net(x).square().sum()


def finite_difference_parameters(net, x, h=1e-5):
    flat = net.flat_parameters()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        step = np.zeros_like(flat)
        step[i] = h
        net.load_flat_parameters(flat + step)
        upper = float(squared_output(net, x).data)
        net.load_flat_parameters(flat - step)
        lower = float(squared_output(net, x).data)
        grad[i] = (upper - lower) / (2 * h)
    net.load_flat_parameters(flat)
    return grad


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def check_parameter_gradients(seed):
    rng = np.random.default_rng(seed)
    widths = [int(rng.integers(1, 5)), int(rng.integers(2, 9)), int(rng.integers(2, 9)), int(rng.integers(1, 4))]
    net = Mlp(widths, rng)
    x = rng.standard_normal((4, widths[0]))
    net.zero_grad()
    squared_output(net, x).backward()
    analytic = np.concatenate([p.grad.ravel() for p in net.parameters()])
    assert relative_error(analytic, finite_difference_parameters(net, x)) <= 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_parameter_gradients_match_finite_differences(seed):
    check_parameter_gradients(seed)


@pytest.mark.slow
def test_parameter_gradients_on_hundred_networks():
    for seed in range(100, 200):
        check_parameter_gradients(seed)


@pytest.mark.parametrize("seed", range(5))
def test_input_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = Mlp([3, 8, 8, 1], rng)
    x = rng.standard_normal((5, 3))
    values, grad = value_and_input_gradient(net, x)
    h = 1e-5
    numeric = np.zeros_like(x)
    for j in range(3):
        step = np.zeros(3)
        step[j] = h
        numeric[:, j] = (net(x + step).data[:, 0] - net(x - step).data[:, 0]) / (2 * h)
    np.testing.assert_allclose(values, net(x).data[:, 0])
    assert relative_error(grad, numeric) <= 1e-4


def test_forward_matches_matrix_multiply(rng):
    net = Mlp([3, 5, 2], rng)
    x = rng.standard_normal((6, 3))
    first, second = net.layers
    hidden = np.maximum(x @ first.weight.data + first.bias.data, 0.0)
    expected = hidden @ second.weight.data + second.bias.data
    np.testing.assert_allclose(net(x).data, expected, atol=1e-12)


def test_quadratic_head_has_analytic_input_gradient(rng):
    x = rng.standard_normal((4, 3))
    grad = input_gradient(lambda t: (t * t).sum(axis=1) * 0.5, x)
    np.testing.assert_allclose(grad, x, atol=1e-6)


def test_input_gradient_column_selection(rng):
    x = rng.standard_normal((2, 4))
    grad = input_gradient(lambda t: (t * t).sum(axis=1), x, columns=slice(2, 4))
    np.testing.assert_allclose(grad, 2.0 * x[:, 2:])


def test_logsumexp_value_and_gradient():
    data = np.array([[1.0, 2.0, 3.0], [-1000.0, 0.0, 1000.0]])
    t = Tensor(data, requires_grad=True)
    out = t.logsumexp(axis=1)
    np.testing.assert_allclose(out.data, logsumexp(data, axis=1))
    out.sum().backward()
    np.testing.assert_allclose(t.grad, softmax(data, axis=1))


def test_log_softmax_rows_normalize():
    t = Tensor(np.array([[0.5, -0.2, 3.0]]))
    np.testing.assert_allclose(np.exp(t.log_softmax(axis=1).data).sum(), 1.0)


def test_huber_switches_to_linear_outside_kappa():
    t = Tensor(np.array([0.5, -3.0]), requires_grad=True)
    out = t.huber(1.0)
    np.testing.assert_allclose(out.data, [0.125, 2.5])
    out.sum().backward()
    np.testing.assert_allclose(t.grad, [0.5, -1.0])


def test_concat_splits_gradient():
    a = Tensor(np.ones((2, 1)), requires_grad=True)
    b = Tensor(np.ones((2, 2)), requires_grad=True)
    (concat([a, b], axis=1) * np.array([1.0, 2.0, 3.0])).sum().backward()
    np.testing.assert_allclose(a.grad, [[1.0], [1.0]])
    np.testing.assert_allclose(b.grad, [[2.0, 3.0], [2.0, 3.0]])


def test_broadcast_gradient_is_summed():
    bias = Tensor(np.zeros(3), requires_grad=True)
    (Tensor(np.ones((4, 3))) + bias).sum().backward()
    np.testing.assert_allclose(bias.grad, [4.0, 4.0, 4.0])


def test_gradients_accumulate_until_zeroed():
    w = Tensor(np.array([2.0]), requires_grad=True)
    (w * w).sum().backward()
    (w * w).sum().backward()
    np.testing.assert_allclose(w.grad, [8.0])
    w.zero_grad()
    np.testing.assert_allclose(w.grad, [0.0])


def test_shared_node_gradient_counts_every_use():
    w = Tensor(np.array([3.0]), requires_grad=True)
    y = w * 2.0
    (y * y + y).sum().backward()
    np.testing.assert_allclose(w.grad, [2.0 * (2 * 6.0 + 1.0)])


def test_backward_requires_scalar():
    with pytest.raises(ShapeError):
        Tensor(np.ones(3), requires_grad=True).exp().backward()


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_mlp_rejects_wrong_input_width(rng):
    with pytest.raises(ShapeError):
        Mlp([3, 4, 1], rng)(np.ones((2, 2)))


def test_adam_minimizes_quadratic():
    p = Tensor(np.array([0.0, 10.0]), requires_grad=True)
    optimizer = Adam([p], lr=0.1)
    for _ in range(3000):
        optimizer.zero_grad()
        ((p - 3.0).square()).sum().backward()
        optimizer.step()
    np.testing.assert_allclose(p.data, [3.0, 3.0], atol=1e-3)


@given(rate=st.floats(0.0, 1.0))
def test_polyak_update_interpolates(rate):
    online = Mlp([2, 3, 1], np.random.default_rng(0))
    target = Mlp([2, 3, 1], np.random.default_rng(1))
    before = target.flat_parameters()
    polyak_update(target, online, rate)
    expected = (1.0 - rate) * before + rate * online.flat_parameters()
    np.testing.assert_allclose(target.flat_parameters(), expected, atol=1e-12)


def test_copy_is_independent(rng):
    net = Mlp([2, 3, 1], rng)
    clone = net.copy()
    clone.parameters()[0].data += 1.0
    assert not np.allclose(clone.flat_parameters(), net.flat_parameters())


def test_checkpoint_restores_network(tmp_path, rng):
    net = Mlp([3, 4, 2], rng)
    save_checkpoint(net, tmp_path / "net", {"steps": 7})
    loaded, metadata = load_checkpoint(tmp_path / "net")
    assert loaded.widths == [3, 4, 2]
    assert metadata == {"steps": 7}
    np.testing.assert_array_equal(loaded.flat_parameters(), net.flat_parameters())


def test_truncated_checkpoint_rejected(tmp_path, rng):
    path = save_checkpoint(Mlp([3, 4, 2], rng), tmp_path / "net")
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataLoadError):
        load_checkpoint(tmp_path / "net")


def test_foreign_file_rejected(tmp_path):
    (tmp_path / "net.bin").write_bytes(b"not a network")
    with pytest.raises(DataLoadError):
        load_checkpoint(tmp_path / "net")
