import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gdnet import tensor as T
from gdnet.gradcheck import gradcheck
from gdnet.tensor import DomainError, GradError, ShapeError, Tensor, no_grad


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_identity_and_naive_oracle():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 5))
    assert np.array_equal(T.matmul(Tensor(np.eye(3)), Tensor(x)).data, x)
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((3, 4))
    out = T.matmul(Tensor(a), Tensor(b))
    assert out.shape == (2, 4)
    np.testing.assert_allclose(out.data, naive_matmul(a, b), rtol=1e-12)


def test_softmax_single_element():
    assert T.softmax(Tensor(np.array([3.7])), axis=-1).data.tolist() == [1.0]


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError) as info:
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    msg = str(info.value)
    assert "matmul" in msg and "(2, 3)" in msg and "(4, 5)" in msg
    with pytest.raises(ShapeError):
        Tensor(np.ones(3)) + Tensor(np.ones(4))


def test_domain_errors():
    with pytest.raises(DomainError):
        T.log(Tensor(np.array([1.0, 0.0])))
    with pytest.raises(DomainError):
        T.sqrt(Tensor(np.array([-1.0])))


def test_backward_simple_gradients():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    x.sum().backward()
    assert x.grad.tolist() == [1.0, 1.0, 1.0]
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    (x * x).sum().backward()
    assert x.grad.tolist() == [2.0, 4.0, 6.0]


def test_backward_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GradError):
        (x * 2.0).backward()  # non-scalar
    with pytest.raises(GradError):
        Tensor(np.ones(())).backward()  # detached
    loss = (x * x).sum()
    loss.backward()
    with pytest.raises(GradError):
        loss.backward()


def test_no_grad_and_frozen_inputs():
    x = Tensor(np.ones(3), requires_grad=True)
    c = Tensor(np.ones(3))
    with no_grad():
        y = (x * 3.0).sum()
    assert not y.requires_grad
    loss = (x * c).sum()
    loss.backward()
    assert c.grad is None


def test_fan_out_accumulates():
    rng = np.random.default_rng(1)
    v = rng.standard_normal(5)
    x = Tensor(v, requires_grad=True)
    (T.exp(x).sum() + (x * x).sum()).backward()
    a = Tensor(v, requires_grad=True)
    T.exp(a).sum().backward()
    b = Tensor(v, requires_grad=True)
    (b * b).sum().backward()
    np.testing.assert_allclose(x.grad, a.grad + b.grad, rtol=1e-15)


def test_gradcheck_mean_exact():
    x = np.random.default_rng(2).standard_normal((3, 4))
    report = gradcheck(lambda t: t.mean(), x)
    assert report.passed and report.max_rel_error < 1e-8


def test_gradcheck_softmax_matmul():
    rng = np.random.default_rng(3)
    w = rng.standard_normal((4, 3))

    def f(a, b):
        return (T.softmax(a @ b, axis=-1) * w).sum()

    assert gradcheck(f, [rng.standard_normal((4, 5)), rng.standard_normal((5, 3))]).passed


def test_gradcheck_rejects_nonscalar():
    with pytest.raises(GradError):
        gradcheck(lambda t: t * 2.0, np.ones(3))


def test_gradcheck_detects_wrong_gradient():
    def bad_square(x):
        return Tensor.from_op(x.data**2, (x,), lambda g: (g * x.data,), "bad_square")

    report = gradcheck(lambda t: bad_square(t).sum(), np.array([1.0, 2.0]))
    assert not report.passed


def test_forward_bit_identical():
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((16, 32)), rng.standard_normal((32, 8))

    def run():
        return T.softmax(T.gelu(Tensor(a) @ Tensor(b)), axis=-1).sum(axis=0).data

    assert np.array_equal(run(), run())


def test_getitem_repeated_index_accumulates():
    x = Tensor(np.arange(4.0), requires_grad=True)
    x[np.array([0, 0, 3])].sum().backward()
    assert x.grad.tolist() == [2.0, 0.0, 0.0, 1.0]


def test_float32_stays_float32():
    x = Tensor(np.ones((2, 2), np.float32), requires_grad=True)
    y = T.gelu(x * 2.0 + 1.0) / 3.0
    assert y.dtype == np.float32
    y.sum().backward()
    assert x.grad.dtype == np.float32


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=5),
                  elements=st.floats(-20, 20)))
def test_softmax_rows_sum_to_one(x):
    y = T.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(y >= 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_random_composed_graph_gradcheck(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    w = rng.standard_normal((n, m))

    def f(a, b):
        h = T.gelu(a * b + a)
        return (T.softmax(h, axis=-1) * w).sum() + T.exp(h.scale(0.1)).mean()

    assert gradcheck(f, [rng.standard_normal((n, m)), rng.standard_normal((n, m))]).passed


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=4), elements=st.floats(-5, 5)))
def test_grad_shape_matches_data(x):
    t = Tensor(x, requires_grad=True)
    (t * t).sum().backward()
    assert t.grad.shape == x.shape
