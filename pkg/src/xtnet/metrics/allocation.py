"""Budget allocation policies, uplift curves and the exact ideal allocation.

A :class:`Units` batch holds, for every unit and every combo, an expected
outcome (baseline subtracted, so the t0 column is 0) and an expected cost.
Policies turn predicted values into an :class:`AllocationPlan`, an ordered
list of per-unit upgrades; curves replay a plan against actual values.

All plans are built with an unlimited budget unless one is given, so a single
plan yields the whole curve: the outcome at budget B is that of the longest
plan prefix whose cumulative cost is <= B.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm

import numpy as np

from .. import kernels
from ..datagen import all_combos

POLICIES = ("qini", "aucc", "mv_aucc", "mcmv_aucc")


class DegenerateScoreError(ZeroDivisionError):
    pass


class InstanceTooLargeError(ValueError):
    pass


@dataclass
class CostModel:
    """cost(t) = sum_k unit_costs[k] * t_k; the default charges 1 per level."""

    unit_costs: tuple | None = None

    def costs(self, combos):
        combos = np.asarray(combos, dtype=np.float64)
        w = np.ones(combos.shape[-1]) if self.unit_costs is None else np.asarray(self.unit_costs, dtype=np.float64)
        if np.any(w <= 0):
            raise ValueError("unit costs must be positive")
        return combos @ w

    def __call__(self, combo):
        return float(self.costs(np.atleast_2d(combo))[0])


class ComboSpace:
    """Index bookkeeping for all combos of a level vector (lexicographic)."""

    def __init__(self, levels):
        self.levels = tuple(int(a) for a in levels)
        self.combos = all_combos(self.levels)
        self.K = len(self.combos)
        self.m = len(self.levels)
        self.radix = np.cumprod([1] + [a + 1 for a in self.levels[::-1]])[:-1][::-1]
        self.intensity = self.combos.sum(axis=1)
        self.qmax = int(sum(self.levels))
        # up[k, j]: index of combo k with category j raised by one, or -1
        self.up = np.full((self.K, self.m), -1, dtype=np.int64)
        for k, c in enumerate(self.combos):
            for j in range(self.m):
                if c[j] < self.levels[j]:
                    self.up[k, j] = k + self.radix[j]
        self.groups = [np.flatnonzero(self.intensity == q) for q in range(self.qmax + 1)]
        # dominates[a, b]: combo a >= combo b componentwise
        self.dominates = np.all(self.combos[:, None, :] >= self.combos[None, :, :], axis=2)

    def index(self, combo):
        return int(np.asarray(combo, dtype=np.int64) @ self.radix)


@dataclass
class Units:
    """Per-unit, per-combo expected outcomes ``Y`` and costs ``C``, shape (U, K)."""

    space: ComboSpace
    Y: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=np.float64))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=np.float64))
        if self.Y.shape != self.C.shape or self.Y.shape[1] != self.space.K:
            raise ValueError(f"Units: Y {self.Y.shape} and C {self.C.shape} must be (U, {self.space.K})")

    @classmethod
    def from_values(cls, levels, Y, cost_model=None):
        space = ComboSpace(levels)
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        C = np.broadcast_to((cost_model or CostModel()).costs(space.combos), Y.shape)
        return cls(space, Y, C.copy())

    @property
    def U(self):
        return self.Y.shape[0]

    def with_values(self, Y):
        return Units(self.space, Y, self.C)

    def total_cost(self):
        return float(self.C[:, -1].sum())

    def budget_grid(self, points=101):
        return np.linspace(0.0, self.total_cost(), points)


# ---------------------------------------------------------------- scores


def aucc_score(y, c):
    if c <= 0:
        raise DegenerateScoreError(f"aucc score: expected cost {c} must be positive")
    return y / c


def marginal_score(y_path, c_path, step):
    """(Y[step] - Y[step-1]) / (C[step] - C[step-1]) along a level path."""
    dc = c_path[step] - c_path[step - 1]
    if dc <= 0:
        raise DegenerateScoreError(f"marginal score: non-positive marginal cost at step {step}")
    return (y_path[step] - y_path[step - 1]) / dc


def group_means(units):
    """(U, qmax+1) group-averaged outcome and cost over combos with Q(t) = q."""
    sp = units.space
    Yb = np.stack([units.Y[:, g].mean(axis=1) for g in sp.groups], axis=1)
    Cb = np.stack([units.C[:, g].mean(axis=1) for g in sp.groups], axis=1)
    return Yb, Cb


def grouped_marginal(units):
    """gamma(x, q) for q = 1..qmax, shape (U, qmax); column q-1 holds gamma(x, q)."""
    Yb, Cb = group_means(units)
    dC = np.diff(Cb, axis=1)
    if np.any(dC <= 0):
        u, q = np.argwhere(dC <= 0)[0]
        raise DegenerateScoreError(f"grouped marginal: non-positive cost step for unit {u} at q={q + 1}")
    return np.diff(Yb, axis=1) / dC


def policy_score(kind, units, u, k, src=0):
    """Score of moving unit ``u`` from combo ``src`` to combo ``k`` (indices)."""
    Y, C = units.Y[u], units.C[u]
    if kind == "qini":
        return float(Y[k])
    if kind == "aucc":
        return aucc_score(Y[k], C[k])
    if kind == "mv_aucc":
        return marginal_score(Y[[src, k]], C[[src, k]], 1)
    if kind == "mcmv_aucc":
        q = int(units.space.intensity[k])
        one = Units(units.space, units.Y[u:u + 1], units.C[u:u + 1])
        return float(grouped_marginal(one)[0, q - 1])
    raise ValueError(f"unknown policy {kind!r}")


# ---------------------------------------------------------------- plans


@dataclass
class Step:
    unit: int
    src: int
    dst: int
    cost: float
    score: float


@dataclass
class AllocationPlan:
    kind: str
    steps: list = field(default_factory=list)

    def final_state(self, U):
        state = np.zeros(U, dtype=np.int64)
        for s in self.steps:
            state[s.unit] = s.dst
        return state

    def state_at(self, U, budget):
        state = np.zeros(U, dtype=np.int64)
        spent = 0.0
        for s in self.steps:
            if spent + s.cost > budget + 1e-12:
                break
            spent += s.cost
            state[s.unit] = s.dst
        return state


def _whole_combo_plan(kind, units, budget):
    sp = units.space
    U, K = units.Y.shape
    if kind == "qini":
        score = units.Y[:, 1:]
    else:
        if np.any(units.C[:, 1:] <= 0):
            raise DegenerateScoreError("aucc: a non-baseline combo has zero expected cost")
        score = units.Y[:, 1:] / units.C[:, 1:]
    uu, kk = np.meshgrid(np.arange(U), np.arange(1, K), indexing="ij")
    uu, kk, ss = uu.ravel(), kk.ravel(), score.ravel()
    order = np.lexsort((kk, uu, -ss))
    cur = np.zeros(U, dtype=np.int64)
    plan = AllocationPlan(kind)
    spent = 0.0
    for i in order:
        u, k = int(uu[i]), int(kk[i])
        src = cur[u]
        if k == src or not sp.dominates[k, src]:
            continue
        dc = units.C[u, k] - units.C[u, src]
        if dc <= 0:
            continue
        if budget is not None and spent + dc > budget + 1e-12:
            continue
        spent += dc
        cur[u] = k
        plan.steps.append(Step(u, int(src), k, float(dc), float(ss[i])))
    return plan


def _heap_plan(kind, units, budget, realize="raise", rng=None):
    """Greedy over per-unit increments kept in a heap (mv, mcmv and random)."""
    sp = units.space
    U = units.U
    Y, C = units.Y, units.C
    cur = np.zeros(U, dtype=np.int64)
    version = np.zeros(U, dtype=np.int64)
    blocked = np.zeros(U, dtype=bool)
    gamma = grouped_marginal(units) if kind == "mcmv_aucc" else None
    heap = []

    def push(u):
        src = cur[u]
        if kind == "mcmv_aucc":
            q = int(sp.intensity[src]) + 1
            if q <= sp.qmax:
                heapq.heappush(heap, (-gamma[u, q - 1], u, q, -1, int(version[u])))
            return
        for j in range(sp.m):
            dst = sp.up[src, j]
            if dst < 0:
                continue
            if kind == "random":
                s = rng.random()
            else:
                dc = C[u, dst] - C[u, src]
                if dc <= 0:
                    raise DegenerateScoreError(f"mv_aucc: non-positive marginal cost for unit {u}")
                s = (Y[u, dst] - Y[u, src]) / dc
            heapq.heappush(heap, (-s, u, int(dst), j, int(version[u])))

    for u in range(U):
        push(u)
    plan = AllocationPlan(kind)
    spent = 0.0
    while heap:
        neg, u, target, _, ver = heapq.heappop(heap)
        if ver != version[u] or blocked[u]:
            continue
        src = int(cur[u])
        if kind == "mcmv_aucc":
            dst = _realize(sp, Y[u], C[u], src, target, realize)
        else:
            dst = target
        dc = float(C[u, dst] - C[u, src])
        if budget is not None and spent + dc > budget + 1e-12:
            blocked[u] = True
            continue
        spent += dc
        cur[u] = dst
        version[u] += 1
        plan.steps.append(Step(u, src, int(dst), dc, -neg))
        push(u)
    return plan


def _realize(sp, y, c, src, q, rule):
    """Concrete combo for a group increment into intensity ``q``."""
    members = sp.groups[q]
    if rule == "raise":
        members = members[sp.dominates[members, src]]
    else:
        members = members[c[members] > c[src]]
        if len(members) == 0:
            members = sp.groups[q][sp.dominates[sp.groups[q], src]]
    # highest predicted outcome; ties go to the lexicographically smallest combo
    return int(members[np.argmax(y[members])])


def allocate(kind, units, budget=None, realize="raise", rng=None):
    """Greedy allocation plan for ``kind`` using the values in ``units``.

    ``budget=None`` builds the full plan.  ``realize`` picks the combo an
    mcmv group increment lands on: "raise" (best combo reachable by raising
    levels) or "best" (best combo of the whole intensity group).
    """
    if budget is not None and budget < 0:
        raise ValueError("budget must be >= 0")
    if kind in ("qini", "aucc"):
        return _whole_combo_plan(kind, units, budget)
    if kind in ("mv_aucc", "mcmv_aucc"):
        return _heap_plan(kind, units, budget, realize)
    if kind == "random":
        return _heap_plan(kind, units, budget, rng=rng or np.random.default_rng(0))
    raise ValueError(f"unknown policy {kind!r}; expected one of {POLICIES}")


# ---------------------------------------------------------------- curves


@dataclass
class UpliftCurve:
    cost: np.ndarray  # cumulative, starts at 0
    outcome: np.ndarray

    def at(self, grid):
        idx = np.searchsorted(self.cost, np.asarray(grid) + 1e-12, side="right") - 1
        return self.outcome[idx]

    def to_csv_rows(self, grid):
        return list(zip(map(float, grid), map(float, self.at(grid))))


def uplift_curve(plan, actual_Y, actual_C=None):
    """Cumulative (cost, actual incremental outcome) along ``plan``."""
    actual_Y = np.atleast_2d(actual_Y)
    cost = [0.0]
    out = [0.0]
    for s in plan.steps:
        if s.unit >= actual_Y.shape[0] or s.dst >= actual_Y.shape[1]:
            raise KeyError(f"uplift_curve: no actual outcome for unit {s.unit}, combo {s.dst}")
        dc = s.cost if actual_C is None else actual_C[s.unit, s.dst] - actual_C[s.unit, s.src]
        cost.append(cost[-1] + dc)
        out.append(out[-1] + actual_Y[s.unit, s.dst] - actual_Y[s.unit, s.src])
    return UpliftCurve(np.array(cost), np.array(out))


def policy_curve(kind, predicted, actual, grid, realize="raise"):
    """Outcome of ``kind`` (planned on ``predicted``) at each grid budget."""
    return uplift_curve(allocate(kind, predicted, realize=realize), actual.Y).at(grid)


def random_curve(actual, grid, shuffles=32, seed=0):
    """Mean curve of uniformly random increment orderings."""
    acc = np.zeros(len(grid))
    for i in range(shuffles):
        plan = allocate("random", actual, rng=np.random.default_rng([seed, i]))
        acc += uplift_curve(plan, actual.Y).at(grid)
    return acc / shuffles


def trapezoid(y, x):
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2.0)


def curve_area_score(curve, random, grid):
    """Trapezoid area of (curve - random) over the grid, divided by B_max."""
    bmax = float(grid[-1])
    if bmax <= 0:
        return 0.0
    return trapezoid(np.asarray(curve) - np.asarray(random), grid) / bmax


# ---------------------------------------------------------------- ideal


def _integer_scale(C, max_den=1000):
    fracs = [Fraction(float(c)).limit_denominator(max_den) for c in np.unique(C)]
    scale = 1
    for f in fracs:
        scale = lcm(scale, f.denominator)
    scaled = np.rint(C * scale)
    if not np.allclose(scaled / scale, C, rtol=0, atol=1e-9):
        return None
    return scale, scaled.astype(np.int64)


def ideal_curve(actual, grid, max_states=2_000_000, max_enum=200_000):
    """Exact optimum of sum_u Y[u, k_u] s.t. sum_u C[u, k_u] <= B, at each grid budget."""
    grid = np.asarray(grid, dtype=np.float64)
    sc = _integer_scale(actual.C)
    if sc is not None:
        scale, Ci = sc
        budget = int(np.floor(grid[-1] * scale + 1e-9))
        if (budget + 1) * actual.U * actual.space.K <= 50 * max_states:
            dp = kernels.mckp_dp(Ci, actual.Y, budget)
            idx = np.floor(grid * scale + 1e-9).astype(np.int64)
            return np.maximum.accumulate(dp)[idx]
    if actual.space.K ** actual.U > max_enum:
        raise InstanceTooLargeError(
            "ideal allocation: costs are not integer-scalable and the instance is too large "
            "to enumerate; compare policies against the greedy bound instead")
    best = np.full(len(grid), -np.inf)
    for choice in itertools.product(range(actual.space.K), repeat=actual.U):
        rows = np.arange(actual.U)
        c = actual.C[rows, choice].sum()
        v = actual.Y[rows, choice].sum()
        best = np.where(grid + 1e-12 >= c, np.maximum(best, v), best)
    return best


def ideal_allocation(actual, budget):
    """Optimal expected outcome at a single budget."""
    return float(ideal_curve(actual, np.array([0.0, float(budget)]))[-1])


def metric_error(kind, predicted, actual, grid=None, realize="raise", ideal=None):
    """Integral over the grid of |O*(B) - O_kind(B)| for one instance."""
    grid = actual.budget_grid() if grid is None else np.asarray(grid)
    ideal = ideal_curve(actual, grid) if ideal is None else ideal
    curve = policy_curve(kind, predicted, actual, grid, realize)
    return trapezoid(np.abs(ideal - curve), grid)


def expected_metric_error(kind, instances, grid=None, realize="raise"):
    """Mean :func:`metric_error` over (predicted, actual) pairs."""
    errs = [metric_error(kind, p, a, grid, realize) for p, a in instances]
    return float(np.mean(errs)) if errs else 0.0
