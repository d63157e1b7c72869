import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from camlink import autodiff as ad
from camlink.autodiff import Tensor
from camlink.errors import ContractError, DimensionError, NumericError

from conftest import grad_check, leaf


def test_matmul_identity_and_selection():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(2)), a).data, a.data)
    np.testing.assert_array_equal(ad.matmul(Tensor([[1.0, 0.0]]), Tensor([[0.0], [5.0]])).data, [[0.0]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient(rng):
    a, b = leaf(rng, 3, 4), leaf(rng, 4, 2)
    assert grad_check(ad.matmul, [a, b], rng) <= 1e-6


def test_batched_matmul_gradient(rng):
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 4, 5)
    assert grad_check(ad.matmul, [a, b], rng) <= 1e-6


def test_softmax_examples():
    np.testing.assert_allclose(ad.softmax(Tensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3], rtol=0, atol=1e-15)
    out = ad.softmax(Tensor([[1000.0, 0.0]])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-300)


def test_softmax_nan_raises():
    with pytest.raises(NumericError):
        ad.softmax(Tensor([[np.nan, 0.0]]))


def test_softmax_jacobian(rng):
    x = leaf(rng, 4, 4)
    assert grad_check(ad.softmax, [x], rng) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.floats(0.1, 50.0), st.integers(0, 2**31 - 1))
def test_softmax_rows_are_distributions(m, n, scale, seed):
    x = np.random.default_rng(seed).normal(scale=scale, size=(m, n))
    out = ad.softmax(Tensor(x)).data
    assert np.all(out >= 0) and np.all(out <= 1)
    np.testing.assert_allclose(out.sum(-1), 1.0, rtol=0, atol=1e-12)


def test_layer_norm_examples():
    one, zero = Tensor(np.ones(4)), Tensor(np.zeros(4))
    np.testing.assert_array_equal(ad.layer_norm(Tensor([[5.0] * 4]), one, zero).data, [[0.0] * 4])
    out = ad.layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
    np.testing.assert_allclose(out, [[1.0, -1.0]], atol=1e-5)


def test_layer_norm_single_feature_returns_bias():
    out = ad.layer_norm(Tensor([[3.0]]), Tensor([2.0]), Tensor([0.25])).data
    np.testing.assert_array_equal(out, [[0.25]])


def test_layer_norm_gradient(rng):
    x, g, b = leaf(rng, 2, 8), leaf(rng, 8), leaf(rng, 8)
    assert grad_check(ad.layer_norm, [x, g, b], rng) <= 1e-5


def test_linear_examples_and_gradient(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    np.testing.assert_array_equal(ad.linear(x, Tensor(np.eye(4)), Tensor(np.zeros(4))).data, x.data)
    b = Tensor([1.0, 2.0])
    np.testing.assert_array_equal(ad.linear(Tensor(np.zeros((3, 4))), Tensor(rng.normal(size=(4, 2))), b).data,
                                  np.tile([1.0, 2.0], (3, 1)))
    xs, w, bb = leaf(rng, 3, 4), leaf(rng, 4, 2), leaf(rng, 2)
    assert grad_check(ad.linear, [xs, w, bb], rng) <= 1e-6


def test_bce_examples():
    assert ad.bce_loss(Tensor([1.0, 1.0]), [1, 1]).item() == pytest.approx(-np.log(1 - 1e-7), rel=1e-9)
    assert ad.bce_loss(Tensor(np.full((3, 3), 0.5)), np.eye(3)).item() == pytest.approx(np.log(2), abs=1e-12)


def test_bce_rejects_soft_targets():
    with pytest.raises(ValueError):
        ad.bce_loss(Tensor([0.5]), [0.3])


def test_bce_gradient(rng):
    p = leaf(rng, 3, 5, low=0.05, high=0.95)
    t = (rng.random((3, 5)) < 0.5).astype(float)
    assert grad_check(lambda q: ad.bce_loss(q, t), [p], rng) <= 1e-6


def test_backward_sum_and_zero_scaled():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))
    x.grad = None
    ad.scale(ad.exp(x), 0.0).sum().backward()
    np.testing.assert_array_equal(x.grad, np.zeros((2, 3)))


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        ad.exp(x).backward()


def test_composed_chain_gradient(rng):
    x, w, g, b = leaf(rng, 3, 5), leaf(rng, 5, 4), leaf(rng, 4), leaf(rng, 4)
    assert grad_check(lambda x, w, g, b: ad.softmax(ad.matmul(ad.layer_norm(ad.matmul(x, w), g, b),
                                                              ad.transpose(w))),
                      [x, w, g, b], rng) <= 1e-5


def test_backward_is_deterministic(rng):
    x, w = leaf(rng, 4, 6), leaf(rng, 6, 3)

    def run():
        x.grad = w.grad = None
        ad.softmax(ad.matmul(x, w)).mean().backward()
        return x.grad.copy(), w.grad.copy()

    first, second = run(), run()
    for a, b in zip(first, second):
        assert a.tobytes() == b.tobytes()


def test_shared_subexpression_accumulates():
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_array_equal(x.grad, [8.0])


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with ad.no_grad():
        y = ad.exp(x)
    assert not y.requires_grad


ELEMENTWISE = [
    ("add", lambda a, b: ad.add(a, b), 2),
    ("sub", lambda a, b: ad.sub(a, b), 2),
    ("mul", lambda a, b: ad.mul(a, b), 2),
    ("div", lambda a, b: ad.div(a, ad.add(ad.square(b), 1.0)), 2),
    ("sigmoid", ad.sigmoid, 1),
    ("relu", ad.relu, 1),
    ("exp", ad.exp, 1),
    ("square", ad.square, 1),
    ("scale", lambda a: ad.scale(a, -2.5), 1),
    ("transpose", ad.transpose, 1),
    ("sum_axis", lambda a: ad.tsum(a, axis=0), 1),
    ("mean", lambda a: ad.mean(a, axis=-1, keepdims=True), 1),
    ("row_broadcast", lambda a: ad.add(a, ad.index(a, (slice(0, 1),))), 1),
    ("concat", lambda a: ad.concat([a, ad.exp(a)], axis=-1), 1),
]


@pytest.mark.parametrize("name,fn,arity", ELEMENTWISE, ids=[e[0] for e in ELEMENTWISE])
def test_recorded_ops_gradient(name, fn, arity, rng):
    inputs = [leaf(rng, 3, 4) for _ in range(arity)]
    assert grad_check(fn, inputs, rng) <= 1e-6


def test_log_gradient(rng):
    assert grad_check(ad.log, [leaf(rng, 3, 4, low=0.5, high=2.0)], rng) <= 1e-6


def test_broadcast_add_gradient(rng):
    a, b = leaf(rng, 2, 3, 4), leaf(rng, 4)
    assert grad_check(ad.add, [a, b], rng) <= 1e-6


def test_concat_shape_error():
    with pytest.raises(DimensionError):
        ad.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=-1)
