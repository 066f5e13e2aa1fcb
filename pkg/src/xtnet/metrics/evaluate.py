"""Score a CATE table against ground truth: ranking error plus policy curves."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .allocation import POLICIES, CostModel, Units, curve_area_score, policy_curve, random_curve
from .ranking import ranking_error


def evaluate_tables(pred, true, levels, policies=POLICIES, grid_points=101, realize="best",
                    cost_model=None, shuffles=32, seed=0):
    """Compare (n, K, s) predicted and true CATE tables.

    Returns ``(report, curves)``.  ``report["outcomes"]`` has one entry per
    outcome with the ranking error and a curve-area score per policy;
    ``curves[r]`` holds the budget grid and every curve for outcome ``r``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.ndim == 2:
        pred, true = pred[..., None], true[..., None]
    if pred.shape != true.shape:
        raise ValueError(f"predicted table {pred.shape} does not match true table {true.shape}")
    unknown = set(policies) - set(POLICIES)
    if unknown:
        raise ValueError(f"unknown policies {sorted(unknown)}; expected a subset of {POLICIES}")
    cost_model = cost_model or CostModel()
    outcomes, curves = [], []
    for r in range(pred.shape[2]):
        mean, std = ranking_error(pred[..., r], true[..., r])
        actual = Units.from_values(levels, true[..., r], cost_model)
        predicted = actual.with_values(pred[..., r])
        grid = actual.budget_grid(grid_points)
        rand = random_curve(actual, grid, shuffles=shuffles, seed=seed)
        entry = {"outcome": r, "ranking_error": {"mean": mean, "std": std}, "curve_area": {}}
        cur = {"budget": grid, "random": rand}
        for kind in policies:
            curve = policy_curve(kind, predicted, actual, grid, realize)
            cur[kind] = curve
            entry["curve_area"][kind] = curve_area_score(curve, rand, grid)
        outcomes.append(entry)
        curves.append(cur)
    report = {"units": int(pred.shape[0]), "combos": int(pred.shape[1]), "realize": realize,
              "grid_points": int(grid_points), "outcomes": outcomes}
    return report, curves


def write_curves(curves, out_dir):
    """One CSV per outcome: budget, random, then each policy's outcome."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for r, cur in enumerate(curves):
        cols = list(cur)
        path = out_dir / f"curves_outcome{r}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(*(cur[c] for c in cols)):
                w.writerow([repr(float(v)) for v in row])
        paths.append(path)
    return paths


def write_summary_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["outcome", "metric", "policy", "value"])
        for e in report["outcomes"]:
            w.writerow([e["outcome"], "ranking_error_mean", "", repr(e["ranking_error"]["mean"])])
            w.writerow([e["outcome"], "ranking_error_std", "", repr(e["ranking_error"]["std"])])
            for kind, v in e["curve_area"].items():
                w.writerow([e["outcome"], "curve_area", kind, repr(v)])
