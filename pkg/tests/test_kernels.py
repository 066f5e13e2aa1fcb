import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xtnet import kernels


def _clouds(rng, P=3, d=2):
    na = rng.integers(1, 6, size=P)
    nb = rng.integers(1, 6, size=P)
    xa = rng.normal(size=(P, na.max(), d))
    xb = rng.normal(size=(P, nb.max(), d))
    return xa, na.astype(np.int64), xb, nb.astype(np.int64)


def test_active_backend_is_reported():
    assert kernels.BACKEND in kernels.backends()


def test_backends_agree_on_sinkhorn(rng):
    impls = kernels.backends()
    if len(impls) < 2:
        pytest.skip("compiled extension not built")
    xa, na, xb, nb = _clouds(rng)
    up = rng.normal(size=len(na))
    res = {}
    for name, mod in impls.items():
        vals, hist = mod.sinkhorn_forward(xa, na, xb, nb, 0.1, 20)
        gx, gy = mod.sinkhorn_backward(xa, na, xb, nb, 0.1, 20, hist, up)
        res[name] = (vals, gx, gy)
    for a, b in zip(res["python"], res["compiled"]):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_padding_is_ignored(backend, rng):
    xa, na, xb, nb = _clouds(rng, P=1)
    v1, _ = backend.sinkhorn_forward(xa, na, xb, nb, 0.1, 20)
    pad_a = np.concatenate([xa, 99.0 * np.ones((1, 3, xa.shape[2]))], axis=1)
    v2, _ = backend.sinkhorn_forward(pad_a, na, xb, nb, 0.1, 20)
    np.testing.assert_allclose(v1, v2, rtol=1e-12)


def _mckp_brute(costs, values, budget):
    U, K = costs.shape
    best = np.full(budget + 1, -np.inf)
    for choice in itertools.product(range(K), repeat=U):
        c = sum(costs[u, k] for u, k in enumerate(choice))
        v = sum(values[u, k] for u, k in enumerate(choice))
        for b in range(c, budget + 1):
            best[b] = max(best[b], v)
    return best


@given(seed=st.integers(0, 10_000), U=st.integers(1, 3), K=st.integers(2, 4), budget=st.integers(0, 9))
def test_mckp_dp_matches_enumeration(seed, U, K, budget):
    rng = np.random.default_rng(seed)
    costs = rng.integers(1, 4, size=(U, K))
    costs[:, 0] = 0
    values = rng.normal(size=(U, K))
    values[:, 0] = 0.0
    expected = _mckp_brute(costs, values, budget)
    for mod in kernels.backends().values():
        np.testing.assert_allclose(mod.mckp_dp(costs.astype(np.int64), values, budget), expected, atol=1e-12)
