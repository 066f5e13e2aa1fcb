"""Factual BCE, Sinkhorn imbalance loss and their weighted total."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np

from . import autodiff as ad
from . import kernels


@dataclass
class LossConfig:
    lambda1: float = 0.1
    lambda2: float = 0.01
    sinkhorn_epsilon: float = 0.1
    sinkhorn_iters: int = 20
    min_group_size: int = 2
    clamp_eps: float = 1e-4

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be >= 0")
        if self.sinkhorn_epsilon <= 0:
            raise ValueError("sinkhorn_epsilon must be > 0")
        if self.sinkhorn_iters < 1:
            raise ValueError("sinkhorn_iters must be >= 1")
        if self.min_group_size < 2:
            raise ValueError("min_group_size must be >= 2")
        if not 0 < self.clamp_eps < 0.5:
            raise ValueError("clamp_eps must lie in (0, 0.5)")

    def to_dict(self):
        return asdict(self)


def bce_factual(pred, y):
    """Mean binary cross-entropy over all n*s entries.

    ``pred`` must already lie strictly inside (0, 1); clamping belongs to the
    caller.
    """
    y = np.asarray(y, dtype=np.float64)
    if pred.value.shape != y.shape:
        raise ad.ShapeError("bce_factual", pred.value.shape, y.shape)
    if np.any(pred.value <= 0.0) or np.any(pred.value >= 1.0):
        raise ValueError("bce_factual: predictions must lie strictly inside (0, 1)")
    tape = pred.tape
    yc = tape.const(y)
    one_minus_y = tape.const(1.0 - y)
    log_p = ad.log(pred)
    log_q = ad.log(ad.shift(ad.scale(pred, -1.0), 1.0))
    ll = ad.add(ad.mul(yc, log_p), ad.mul(one_minus_y, log_q))
    return ad.scale(ad.mean(ll), -1.0)


def entropic_ot(points, pairs, eps, iters):
    """Entropic OT values for several pairs of row subsets of ``points``.

    ``pairs`` is a list of ``(idx_a, idx_b)`` integer arrays selecting rows
    of the (N, d) node ``points``.  Returns a (P,) node.  Forward and adjoint
    run in the compiled kernel when available.
    """
    X = points.value
    d = X.shape[1]
    P = len(pairs)
    na = np.array([len(a) for a, _ in pairs], dtype=np.int64)
    nb = np.array([len(b) for _, b in pairs], dtype=np.int64)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("entropic_ot: point sets must be non-empty")
    xa = np.zeros((P, na.max(), d))
    xb = np.zeros((P, nb.max(), d))
    for p, (ia, ib) in enumerate(pairs):
        xa[p, : len(ia)] = X[ia]
        xb[p, : len(ib)] = X[ib]
    values, hist = kernels.sinkhorn_forward(xa, na, xb, nb, eps, iters)

    def bw(g):
        gx, gy = kernels.sinkhorn_backward(xa, na, xb, nb, eps, iters, hist, g)
        full = np.zeros_like(X)
        for p, (ia, ib) in enumerate(pairs):
            np.add.at(full, ia, gx[p, : len(ia)])
            np.add.at(full, ib, gy[p, : len(ib)])
        ad.accumulate(points, full)

    return ad.make_node(values, (points,), bw, "entropic_ot")


def _stack_sets(A, B):
    tape = A.tape if isinstance(A, ad.Node) else (B.tape if isinstance(B, ad.Node) else ad.Tape())
    A = A if isinstance(A, ad.Node) else tape.const(np.atleast_2d(A))
    B = B if isinstance(B, ad.Node) else tape.const(np.atleast_2d(B))
    if A.value.ndim != 2 or B.value.ndim != 2 or A.value.shape[1] != B.value.shape[1]:
        raise ad.ShapeError("sinkhorn_divergence", A.value.shape, B.value.shape,
                            detail="point dimensions differ")
    if A.value.shape[0] == 0 or B.value.shape[0] == 0:
        raise ValueError("sinkhorn_divergence: point sets must be non-empty")
    return A, B


def sinkhorn_divergence(A, B, eps=0.1, iters=20):
    """Debiased divergence OT(A,B) - OT(A,A)/2 - OT(B,B)/2 with uniform weights."""
    A, B = _stack_sets(A, B)
    n = A.value.shape[0]
    both = ad.concat([A, B], axis=0)
    ia = np.arange(n)
    ib = np.arange(n, n + B.value.shape[0])
    v = entropic_ot(both, [(ia, ib), (ia, ia), (ib, ib)], eps, iters)
    w = A.tape.const(np.array([1.0, -0.5, -0.5]))
    return ad.sum(ad.mul(v, w))


def group_indices(combos, min_group_size=1):
    """Row indices per distinct treatment combo, in lexicographic combo order."""
    combos = np.asarray(combos)
    if len(combos) == 0:
        return []
    keys, inverse = np.unique(combos, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    groups = []
    for k in range(len(keys)):
        idx = np.flatnonzero(inverse == k)
        if len(idx) >= min_group_size:
            groups.append(idx)
    return groups


def imbalance_loss(hidden, combos, cfg=None):
    """Sum of Sinkhorn divergences over unordered pairs of treatment groups.

    Groups smaller than ``cfg.min_group_size`` are skipped; with fewer than
    two eligible groups the loss is a constant zero.
    """
    cfg = cfg or LossConfig()
    groups = group_indices(combos, cfg.min_group_size)
    G = len(groups)
    if G < 2:
        return hidden.tape.const(np.array(0.0))
    pairs = [(groups[i], groups[j]) for i, j in combinations(range(G), 2)]
    pairs += [(g, g) for g in groups]
    weights = np.concatenate([np.ones(G * (G - 1) // 2), np.full(G, -0.5 * (G - 1))])
    v = entropic_ot(hidden, pairs, cfg.sinkhorn_epsilon, cfg.sinkhorn_iters)
    return ad.sum(ad.mul(v, hidden.tape.const(weights)))


def total_loss(factual, imb, cfg=None):
    cfg = cfg or LossConfig()
    return ad.add(ad.scale(factual, cfg.lambda1), ad.scale(imb, cfg.lambda2))


def entropic_ot_composed(A, B, eps, iters):
    """Same quantity as one :func:`entropic_ot` pair, built from primitive ops.

    Slow; exists so the fused kernel can be checked against an independent
    construction (values and gradients).
    """
    tape = A.tape
    n, m = A.value.shape[0], B.value.shape[0]
    sqa = ad.sum(ad.mul(A, A), axis=1)
    sqb = ad.sum(ad.mul(B, B), axis=1)
    cross = ad.matmul(A, ad.einsum("ij->ji", B))
    C = ad.add_col(ad.add_row(ad.scale(cross, -2.0), sqb), sqa)
    logb = tape.const(np.full(m, -np.log(m)))
    loga = tape.const(np.full(n, -np.log(n)))
    f = tape.const(np.zeros(n))
    g = tape.const(np.zeros(m))
    negC = ad.scale(C, -1.0 / eps)
    for k in range(1, iters + 2):
        za = ad.add_row(ad.add_row(negC, ad.scale(g, 1.0 / eps)), logb)
        zb = ad.add_col(ad.add_col(negC, ad.scale(f, 1.0 / eps)), loga)
        tf = ad.scale(ad.logsumexp(za, axis=1), -eps)
        tg = ad.scale(ad.logsumexp(zb, axis=0), -eps)
        if k <= iters:
            f, g = ad.scale(ad.add(f, tf), 0.5), ad.scale(ad.add(g, tg), 0.5)
        else:
            f, g = tf, tg
    return ad.add(ad.mean(f), ad.mean(g))
