import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xtnet import autodiff as ad
from xtnet.losses import (
    LossConfig,
    bce_factual,
    entropic_ot,
    entropic_ot_composed,
    group_indices,
    imbalance_loss,
    sinkhorn_divergence,
    total_loss,
)


def test_bce_analytic_values():
    t = ad.Tape()
    assert bce_factual(t.const([[0.5]]), [[1.0]]).value == pytest.approx(np.log(2))
    assert bce_factual(t.const([[0.5]]), [[0.5]]).value == pytest.approx(np.log(2))


def test_bce_matches_loop_oracle(rng):
    p = rng.uniform(0.01, 0.99, size=(7, 3))
    y = rng.uniform(0, 1, size=(7, 3))
    acc = 0.0
    for i in range(7):
        for j in range(3):
            acc += y[i, j] * np.log(p[i, j]) + (1 - y[i, j]) * np.log(1 - p[i, j])
    got = bce_factual(ad.Tape().const(p), y).value
    assert abs(got - (-acc / 21)) < 1e-12


def test_bce_rejects_unclamped():
    with pytest.raises(ValueError):
        bce_factual(ad.Tape().const([[1.0]]), [[1.0]])


def test_divergence_identity_and_singletons():
    t = ad.Tape()
    A = np.random.default_rng(0).random((6, 3))
    assert abs(sinkhorn_divergence(t.const(A), t.const(A)).value) < 1e-6
    p, q = np.array([[0.0, 1.0]]), np.array([[1.0, 3.0]])
    assert sinkhorn_divergence(t.const(p), t.const(q), eps=0.01).value == pytest.approx(5.0, abs=1e-6)


def test_divergence_dimension_mismatch():
    t = ad.Tape()
    with pytest.raises(ad.ShapeError):
        sinkhorn_divergence(t.const(np.zeros((2, 2))), t.const(np.zeros((2, 3))))


def _exact_ot(A, B):
    C = ((A[:, None] - B[None]) ** 2).sum(-1)
    n = len(A)
    return min(sum(C[i, s[i]] for i in range(n)) for s in itertools.permutations(range(n))) / n


def test_four_point_exact_ot():
    rng = np.random.default_rng(11)
    t = ad.Tape()
    for _ in range(5):
        A, B = rng.random((4, 2)), rng.random((4, 2))
        got = sinkhorn_divergence(t.const(A), t.const(B), 1e-3, 5000).value
        assert abs(got - _exact_ot(A, B)) <= 0.02 * _exact_ot(A, B)


def test_fused_kernel_matches_composed_ops():
    t = ad.Tape(3)
    A, B = t.param((5, 3)), t.param((4, 3))
    fused = entropic_ot(ad.concat([A, B]), [(np.arange(5), np.arange(5, 9))], 0.1, 20)
    t.backward(ad.sum(fused))
    g_fused = A.grad.copy(), B.grad.copy()
    t.reset()
    A.zero_grad()
    B.zero_grad()
    comp = entropic_ot_composed(A, B, 0.1, 20)
    t.backward(comp)
    np.testing.assert_allclose(fused.value[0], comp.value, rtol=1e-12)
    np.testing.assert_allclose(g_fused[0], A.grad, atol=1e-12)
    np.testing.assert_allclose(g_fused[1], B.grad, atol=1e-12)


@given(seed=st.integers(0, 10_000), n=st.integers(1, 7), m=st.integers(1, 7))
def test_divergence_nonnegative_and_symmetric(seed, n, m):
    rng = np.random.default_rng(seed)
    t = ad.Tape()
    A, B = t.const(rng.normal(size=(n, 3))), t.const(rng.normal(size=(m, 3)))
    ab = sinkhorn_divergence(A, B).value
    ba = sinkhorn_divergence(B, A).value
    assert ab >= -1e-9
    assert abs(ab - ba) < 1e-10


def test_imbalance_single_group_is_zero():
    t = ad.Tape()
    h = t.const(np.random.default_rng(0).random((5, 2)))
    assert imbalance_loss(h, np.ones((5, 2), dtype=int)).value == 0.0


def test_imbalance_identical_groups_zero():
    t = ad.Tape()
    pts = np.random.default_rng(1).random((4, 3))
    h = t.const(np.vstack([pts, pts]))
    combos = np.array([[0, 0]] * 4 + [[1, 0]] * 4)
    assert abs(imbalance_loss(h, combos).value) < 1e-6


def test_imbalance_three_groups_sum_of_pairs(rng):
    t = ad.Tape()
    H = rng.normal(size=(9, 2))
    combos = np.array([[0, 0]] * 3 + [[1, 0]] * 3 + [[0, 2]] * 3)
    got = imbalance_loss(t.const(H), combos).value
    groups = [H[0:3], H[3:6], H[6:9]]
    expected = sum(sinkhorn_divergence(t.const(groups[i]), t.const(groups[j])).value
                   for i, j in itertools.combinations(range(3), 2))
    assert got == pytest.approx(expected, abs=1e-12)


def test_small_groups_skipped(rng):
    t = ad.Tape()
    H = rng.normal(size=(7, 2))
    combos = np.array([[0, 0]] * 3 + [[1, 0]] * 3 + [[2, 2]])
    two = imbalance_loss(t.const(H), combos).value
    direct = sinkhorn_divergence(t.const(H[:3]), t.const(H[3:6])).value
    assert two == pytest.approx(direct, abs=1e-12)
    assert [len(g) for g in group_indices(combos, 2)] == [3, 3]


def test_imbalance_gradient_check(rng):
    t = ad.Tape(8)
    H = t.param((8, 2))
    combos = np.array([[0, 0], [1, 0], [0, 0], [1, 0], [2, 1], [2, 1], [0, 0], [1, 0]])
    assert ad.grad_check(lambda: imbalance_loss(H, combos), [H]) < 1e-3


def test_total_loss_weights():
    t = ad.Tape()
    f, i = t.const(np.array(2.0)), t.const(np.array(3.0))
    assert total_loss(f, i, LossConfig(lambda1=1.0, lambda2=1.0)).value == 5.0
    assert total_loss(f, i, LossConfig(lambda1=0.1, lambda2=0.0)).value == pytest.approx(0.2)
    cfg = LossConfig()
    assert (cfg.lambda1, cfg.lambda2) == (0.1, 0.01)


@pytest.mark.parametrize("bad", [dict(lambda1=-1), dict(sinkhorn_epsilon=0), dict(sinkhorn_iters=0),
                                 dict(min_group_size=1)])
def test_loss_config_validation(bad):
    with pytest.raises(ValueError):
        LossConfig(**bad)
