"""Pure numpy implementations of the hot kernels.

Both the log-domain Sinkhorn solver and the multiple-choice knapsack DP are
written so that the compiled module in ``_core.pyx`` can mirror them line for
line.  Results from the two backends agree to rounding error.
"""

import numpy as np

NEG_INF = -np.inf


def _pad_masks(nx, ny, n, m):
    mx = np.arange(n)[None, :] < nx[:, None]
    my = np.arange(m)[None, :] < ny[:, None]
    loga = np.where(mx, -np.log(np.maximum(nx, 1))[:, None], NEG_INF)
    logb = np.where(my, -np.log(np.maximum(ny, 1))[:, None], NEG_INF)
    return mx, my, loga, logb


def _sq_cost(x, y):
    diff = x[:, :, None, :] - y[:, None, :, :]
    return np.einsum("pijd,pijd->pij", diff, diff), diff


def _lse(z, axis):
    zmax = np.max(z, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(z - zmax), axis=axis, keepdims=True)) + zmax
    return np.squeeze(out, axis=axis)


def _mix(k, iters):
    # averaged symmetric updates, then one full update
    return 0.5 if k <= iters else 1.0


def sinkhorn_forward(x, nx, y, ny, eps, iters):
    """Batched entropic OT with uniform weights and squared-Euclidean cost.

    ``x`` is (P, n, d) and ``y`` is (P, m, d), zero padded; ``nx``/``ny``
    hold the true point counts.  Potentials start at zero and take ``iters``
    averaged symmetric steps f <- (f + T_a(g))/2, g <- (g + T_b(f))/2,
    followed by one full step.  Swapping the two point sets swaps f and g
    exactly.  Returns the dual values <a, f> + <b, g> and the potential
    history needed by the adjoint.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    nx = np.asarray(nx, dtype=np.int64)
    ny = np.asarray(ny, dtype=np.int64)
    P, n, _ = x.shape
    m = y.shape[1]
    mx, my, loga, logb = _pad_masks(nx, ny, n, m)
    C, _ = _sq_cost(x, y)
    f_hist = np.zeros((iters + 2, P, n))
    g_hist = np.zeros((iters + 2, P, m))
    f = f_hist[0]
    g = g_hist[0]
    for k in range(1, iters + 2):
        alpha = _mix(k, iters)
        za = logb[:, None, :] + (g[:, None, :] - C) / eps
        zb = loga[:, :, None] + (f[:, :, None] - C) / eps
        f, g = ((1 - alpha) * f - alpha * eps * _lse(za, axis=2),
                (1 - alpha) * g - alpha * eps * _lse(zb, axis=1))
        f_hist[k] = f
        g_hist[k] = g
    a = np.where(mx, 1.0 / np.maximum(nx, 1)[:, None], 0.0)
    b = np.where(my, 1.0 / np.maximum(ny, 1)[:, None], 0.0)
    values = np.sum(a * f, axis=1) + np.sum(b * g, axis=1)
    return values, (f_hist, g_hist)


def sinkhorn_backward(x, nx, y, ny, eps, iters, hist, upstream):
    """Reverse-mode pass through the unrolled iterations of ``sinkhorn_forward``.

    Returns gradients of ``sum(upstream * values)`` w.r.t. ``x`` and ``y``.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    nx = np.asarray(nx, dtype=np.int64)
    ny = np.asarray(ny, dtype=np.int64)
    upstream = np.asarray(upstream, dtype=np.float64)
    f_hist, g_hist = hist
    P, n, _ = x.shape
    m = y.shape[1]
    mx, my, loga, logb = _pad_masks(nx, ny, n, m)
    C, diff = _sq_cost(x, y)
    a = np.where(mx, 1.0 / np.maximum(nx, 1)[:, None], 0.0)
    b = np.where(my, 1.0 / np.maximum(ny, 1)[:, None], 0.0)
    F = upstream[:, None] * a
    G = upstream[:, None] * b
    dC = np.zeros_like(C)
    for k in range(iters + 1, 0, -1):
        alpha = _mix(k, iters)
        f_prev = f_hist[k - 1]
        g_prev = g_hist[k - 1]
        za = logb[:, None, :] + (g_prev[:, None, :] - C) / eps
        Sa = np.exp(za - _lse(za, axis=2)[:, :, None])
        zb = loga[:, :, None] + (f_prev[:, :, None] - C) / eps
        Sb = np.exp(zb - _lse(zb, axis=1)[:, None, :])
        dC += alpha * (F[:, :, None] * Sa + G[:, None, :] * Sb)
        F, G = ((1 - alpha) * F - alpha * np.einsum("pij,pj->pi", Sb, G),
                (1 - alpha) * G - alpha * np.einsum("pij,pi->pj", Sa, F))
    gx = 2.0 * np.einsum("pij,pijd->pid", dC, diff)
    gy = -2.0 * np.einsum("pij,pijd->pjd", dC, diff)
    return gx, gy


def mckp_dp(costs, values, budget):
    """Best total value using one option per unit with total cost <= b.

    ``costs`` is an integer (U, T) array, ``values`` a float (U, T) array and
    ``budget`` a non-negative int.  Every unit must have a zero-cost,
    zero-value option (the untreated baseline).  Returns ``dp`` with
    ``dp[b]`` the optimum at budget ``b`` for b = 0..budget.
    """
    costs = np.asarray(costs, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    dp = np.zeros(budget + 1)
    for u in range(costs.shape[0]):
        new = np.full(budget + 1, NEG_INF)
        for c, v in zip(costs[u], values[u]):
            if c > budget:
                continue
            cand = dp[: budget + 1 - c] + v
            np.maximum(new[c:], cand, out=new[c:])
        dp = new
    return dp
