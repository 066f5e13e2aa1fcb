"""Normalised Spearman footrule between predicted and true combo rankings."""

import numpy as np
from scipy.stats import rankdata


def max_footrule(c):
    return (c * c) // 2


def footrule(pred, true):
    """Sum of |rank differences| for one unit, ties taking average ranks."""
    return float(np.abs(rankdata(pred) - rankdata(true)).sum())


def ranking_error(pred_cate, true_cate):
    """Mean and std over units of footrule / floor(c^2 / 2).

    Both inputs are (n_units, c) score arrays (a trailing outcome axis of
    size 1 is squeezed away).
    """
    pred = np.asarray(pred_cate, dtype=np.float64)
    true = np.asarray(true_cate, dtype=np.float64)
    if pred.ndim == 3 and pred.shape[-1] == 1:
        pred, true = pred[..., 0], true[..., 0]
    if pred.shape != true.shape or pred.ndim != 2:
        raise ValueError(f"ranking_error: expected matching (units, combos) arrays, got {pred.shape} and {true.shape}")
    c = pred.shape[1]
    if c < 2:
        raise ValueError("ranking_error: need at least 2 combos per unit")
    d = np.abs(rankdata(pred, axis=1) - rankdata(true, axis=1)).sum(axis=1) / max_footrule(c)
    return float(d.mean()), float(d.std())
