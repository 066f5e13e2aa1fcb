import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xtnet import autodiff as ad
from xtnet.losses import bce_factual, sinkhorn_divergence


def test_elementary_values():
    t = ad.Tape()
    assert ad.sigmoid(t.const(np.array(0.0))).value == 0.5
    assert ad.tanh(t.const(np.array(0.0))).value == 0.0
    m = t.const(np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(ad.matmul(m, t.const(np.eye(2))).value, m.value)


def test_square_gradient():
    t = ad.Tape()
    x = t.param((1,), init=[3.0])
    t.backward(ad.sum(ad.mul(x, x)))
    assert x.grad[0] == 6.0


def test_sigmoid_at_zero_weights():
    t = ad.Tape()
    W = t.param((3, 2), init=np.zeros((3, 2)))
    x = np.array([1.0, -2.0])
    t.backward(ad.sum(ad.sigmoid(ad.matmul(W, t.const(x[:, None])))))
    np.testing.assert_allclose(W.grad, 0.25 * np.outer(np.ones(3), x))


def test_non_scalar_root_rejected():
    t = ad.Tape()
    x = t.param((2,))
    with pytest.raises(ad.ShapeError):
        t.backward(ad.mul(x, x))


def test_shape_mismatch_names_op():
    t = ad.Tape()
    with pytest.raises(ad.ShapeError, match="add"):
        ad.add(t.const(np.zeros(2)), t.const(np.zeros(3)))
    with pytest.raises(ad.ShapeError, match="matmul"):
        ad.matmul(t.const(np.zeros((2, 3))), t.const(np.zeros((2, 3))))


def test_backward_idempotent_after_zero_grad():
    t = ad.Tape(1)
    W = t.param((3, 3))
    x = t.const(np.arange(3.0)[:, None])

    def run():
        W.zero_grad()
        t.backward(ad.sum(ad.tanh(ad.matmul(W, x))))
        t.reset()
        return W.grad.copy()

    np.testing.assert_array_equal(run(), run())


def test_grad_check_quadratic():
    t = ad.Tape(2)
    x = t.param((4,))
    A = np.diag([1.0, 2.0, 3.0, 4.0])

    def f():
        return ad.sum(ad.mul(x, ad.reshape(ad.matmul(t.const(A), ad.reshape(x, (4, 1))), (4,))))

    assert ad.grad_check(f, [x]) < 1e-7


def test_grad_check_bce_tiny_net():
    t = ad.Tape(3)
    W1, b1 = t.param((2, 4)), t.param((4,))
    W2, b2 = t.param((4, 1)), t.param((1,))
    X = np.random.default_rng(0).normal(size=(4, 2))
    y = np.array([[0.0], [1.0], [1.0], [0.3]])

    def f():
        h = ad.tanh(ad.add_row(ad.matmul(t.const(X), W1), b1))
        return bce_factual(ad.sigmoid(ad.add_row(ad.matmul(h, W2), b2)), y)

    assert ad.grad_check(f, [W1, b1, W2, b2]) < 1e-4


def test_grad_check_sinkhorn_points():
    t = ad.Tape(4)
    A, B = t.param((5, 2)), t.param((5, 2))
    assert ad.grad_check(lambda: sinkhorn_divergence(A, B, 0.1, 20), [A, B]) < 1e-3


def test_grad_check_rejects_non_finite():
    t = ad.Tape()
    x = t.param((1,), init=[-1.0])
    with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError):
        ad.grad_check(lambda: ad.sum(ad.log(x)), [x])


def test_clamp_zero_gradient_outside():
    t = ad.Tape()
    x = t.param((3,), init=[-1.0, 0.5, 2.0])
    t.backward(ad.sum(ad.clamp(x, 0.0, 1.0)))
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_clamp_inward_keeps_restoring_direction():
    t = ad.Tape()
    x = t.param((3,), init=[-1.0, 0.5, 2.0])
    # loss -sum(clamp): descent wants to raise every entry
    t.backward(ad.scale(ad.sum(ad.clamp_inward(x, 0.0, 1.0)), -1.0))
    np.testing.assert_array_equal(x.grad, [-1.0, -1.0, 0.0])


def _mlp(seed, rng):
    layers = int(rng.integers(1, 4))
    widths = [int(rng.integers(1, 17)) for _ in range(layers)]
    t = ad.Tape(seed)
    dims = [3] + widths
    params = []
    for a, b in zip(dims[:-1], dims[1:]):
        params += [t.param((a, b)), t.param((b,))]
    acts = [ad.tanh, ad.sigmoid, ad.relu]
    X = rng.normal(size=(5, 3))
    act = acts[seed % 3]

    def f():
        h = t.const(X)
        for i in range(0, len(params), 2):
            h = act(ad.add_row(ad.matmul(h, params[i]), params[i + 1]))
        return ad.mean(ad.mul(h, h))

    return f, params


@pytest.mark.parametrize("seed", range(10))
def test_small_nets_match_finite_differences(seed):
    f, params = _mlp(seed, np.random.default_rng(seed))
    assert ad.grad_check(f, params) < 1e-4


def test_seeded_init_is_deterministic():
    a = ad.Tape(7).param((4, 4)).value
    b = ad.Tape(7).param((4, 4)).value
    np.testing.assert_array_equal(a, b)
    bound = np.sqrt(1.0 / 4)
    assert np.all(np.abs(a) <= bound)


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 10_000))
def test_backward_is_linear(a, b, seed):
    t = ad.Tape(seed)
    W = t.param((3, 2))
    x = t.const(np.random.default_rng(seed).normal(size=(2, 4)))

    def grads(fn):
        W.zero_grad()
        t.backward(fn())
        t.reset()
        return W.grad.copy()

    f = lambda: ad.sum(ad.tanh(ad.matmul(W, x)))  # noqa: E731
    g = lambda: ad.mean(ad.exp(ad.matmul(W, x)))  # noqa: E731
    both = grads(lambda: ad.add(ad.scale(f(), a), ad.scale(g(), b)))
    np.testing.assert_allclose(both, a * grads(f) + b * grads(g), rtol=0, atol=1e-12)


@given(seed=st.integers(0, 10_000))
def test_identical_seed_identical_gradients(seed):
    out = []
    for _ in range(2):
        t = ad.Tape(seed)
        W = t.param((4, 3))
        x = t.const(np.ones((3, 2)))
        loss = ad.sum(ad.sigmoid(ad.matmul(W, x)))
        t.backward(loss)
        out.append((loss.value.copy(), W.grad.copy()))
    np.testing.assert_array_equal(out[0][0], out[1][0])
    np.testing.assert_array_equal(out[0][1], out[1][1])


def test_einsum_and_pick_gradients():
    t = ad.Tape(5)
    A = t.param((3, 4))
    B = t.param((4, 2))
    idx = np.array([1, 0, 1])

    def f():
        prod = ad.einsum("ij,jk->ik", A, B)
        return ad.sum(ad.mul(ad.pick(prod, idx), ad.pick(prod, idx)))

    assert ad.grad_check(f, [A, B]) < 1e-6
