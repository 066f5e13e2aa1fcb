"""Empirical check of the metric-dominance chain on generated instances.

Instances follow an additive-plus-interactions structure:

    E[Y(x, t)] = sum_j f_j(t_j) + sum_{i<j} g_ij(t_i, t_j)

with every f_j strictly increasing and strictly concave on the level grid,
and g_ij in [0, G], non-decreasing in both levels, and zero when either
level is zero.  Policies plan on noisy predictions; outcomes and the ideal
allocation use the noiseless values.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from .allocation import (
    POLICIES,
    ComboSpace,
    CostModel,
    Units,
    allocate,
    ideal_curve,
    policy_curve,
    trapezoid,
)

TOL = 1e-9


class InfeasibleConfigError(ValueError):
    pass


@dataclass
class TheoremConfig:
    k: int = 3
    levels: int = 2
    G: float = 1.0
    rho: float = 0.5
    noise: float = 0.0
    units: int = 1
    instances: int = 200
    budget_points: int = 101
    first_step: tuple = (0.8, 1.2)
    decay: tuple = (0.3, 0.8)
    strength: tuple = (0.5, 1.0)
    anchor_weight: float = 0.2
    mcmv_realize: str = "best"
    chain_threshold: float = 0.95
    strict_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.first_step = tuple(float(v) for v in self.first_step)
        self.decay = tuple(float(v) for v in self.decay)
        self.strength = tuple(float(v) for v in self.strength)
        self.validate()

    def validate(self):
        if self.k < 1 or self.levels < 1 or self.units < 1 or self.instances < 1:
            raise InfeasibleConfigError("k, levels, units and instances must be >= 1")
        if self.G < 0:
            raise InfeasibleConfigError("G must be >= 0")
        if not 0.0 <= self.rho <= 1.0:
            raise InfeasibleConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if self.rho > max_density(self.k, self.levels):
            raise InfeasibleConfigError(
                f"rho={self.rho} exceeds the largest achievable interaction density "
                f"{max_density(self.k, self.levels):.4f} for k={self.k}, levels={self.levels}")
        if self.rho > 0 and self.G == 0:
            raise InfeasibleConfigError("rho > 0 needs G > 0 (interactions must be non-zero)")
        if self.noise < 0:
            raise InfeasibleConfigError("noise must be >= 0")
        lo, hi = self.decay
        if not 0 < lo <= hi < 1:
            raise InfeasibleConfigError("decay bounds must satisfy 0 < lo <= hi < 1 (strict concavity)")
        if self.first_step[0] <= 0 or self.first_step[0] > self.first_step[1]:
            raise InfeasibleConfigError("first_step bounds must be positive and ordered")
        if not 0 < self.strength[0] <= self.strength[1] <= 1:
            raise InfeasibleConfigError("strength bounds must satisfy 0 < lo <= hi <= 1")
        if not 0 < self.anchor_weight <= 1:
            raise InfeasibleConfigError("anchor_weight must lie in (0, 1]")
        if self.mcmv_realize not in ("raise", "best"):
            raise InfeasibleConfigError("mcmv_realize must be 'raise' or 'best'")
        if self.budget_points < 2:
            raise InfeasibleConfigError("budget_points must be >= 2")

    def to_dict(self):
        d = asdict(self)
        d["first_step"] = list(self.first_step)
        d["decay"] = list(self.decay)
        d["strength"] = list(self.strength)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InfeasibleConfigError(f"unknown theorem config fields: {sorted(unknown)}")
        return cls(**d)


def interaction_count(combo, active):
    """I(t): number of active category pairs with both levels non-zero."""
    nz = np.flatnonzero(np.asarray(combo) > 0)
    return int(sum(active[i, j] for i, j in itertools.combinations(nz, 2)))


def density_by_group(space, active):
    """Fraction of combos with I(t) > 0 per intensity level q >= k (k = category count)."""
    has = np.array([interaction_count(c, active) > 0 for c in space.combos])
    return {q: float(has[g].mean()) for q, g in enumerate(space.groups) if q >= max(space.m, 2)}


def max_density(k, levels):
    """Best achievable min-over-q density when every pair interacts."""
    if k < 2:
        return 0.0
    space = ComboSpace((levels,) * k)
    d = density_by_group(space, np.ones((k, k), dtype=bool))
    return min(d.values()) if d else 0.0


@dataclass
class Instance:
    space: ComboSpace
    f: np.ndarray          # (U, k, L+1) per-category responses, f[..., 0] = 0
    g: np.ndarray          # (U, k, k, L+1, L+1) pair interactions (i < j used)
    active: np.ndarray     # (k, k) bool
    truth: Units
    predicted: Units
    additive: Units


def _values(space, f, g):
    U, k = f.shape[:2]
    Y = np.zeros((U, space.K))
    for idx, c in enumerate(space.combos):
        v = sum(f[:, j, c[j]] for j in range(k))
        for i, j in itertools.combinations(range(k), 2):
            v = v + g[:, i, j, c[i], c[j]]
        Y[:, idx] = v
    return Y


def gen_theorem_instances(cfg, rng=None):
    """Draw ``cfg.instances`` assumption-satisfying instances."""
    rng = rng or np.random.default_rng(cfg.seed)
    space = ComboSpace((cfg.levels,) * cfg.k)
    costs = CostModel()
    L = cfg.levels
    lv = np.arange(L + 1)
    shape = np.sqrt(np.outer(lv, lv)) / L  # non-decreasing, zero on the axes, max 1
    out = []
    for _ in range(cfg.instances):
        steps = np.empty((cfg.units, cfg.k, L))
        steps[..., 0] = rng.uniform(*cfg.first_step, size=(cfg.units, cfg.k))
        for l in range(1, L):
            steps[..., l] = steps[..., l - 1] * rng.uniform(*cfg.decay, size=(cfg.units, cfg.k))
        f = np.concatenate([np.zeros((cfg.units, cfg.k, 1)), np.cumsum(steps, axis=2)], axis=2)
        active = _draw_active(cfg, space, rng)
        strength = rng.uniform(*cfg.strength, size=(cfg.units, cfg.k, cfg.k)) * active
        # pairs touching a unit's strongest first-step category interact weakly
        anchor = np.argmax(steps[..., 0], axis=1)
        touches = np.zeros((cfg.units, cfg.k, cfg.k), dtype=bool)
        touches[np.arange(cfg.units), anchor, :] = True
        touches[np.arange(cfg.units), :, anchor] = True
        strength = np.where(touches, strength * cfg.anchor_weight, strength)
        g = cfg.G * strength[..., None, None] * shape
        truth = Units(space, _values(space, f, g), np.broadcast_to(costs.costs(space.combos), (cfg.units, space.K)))
        noisy = truth.Y + rng.normal(0.0, cfg.noise, size=truth.Y.shape) if cfg.noise > 0 else truth.Y.copy()
        noisy[:, 0] = 0.0
        additive = Units(space, _values(space, f, np.zeros_like(g)), truth.C)
        out.append(Instance(space, f, g, active, truth, truth.with_values(noisy), additive))
    return out


def _draw_active(cfg, space, rng):
    k = cfg.k
    active = np.zeros((k, k), dtype=bool)
    if cfg.G == 0 or k < 2:
        return active
    pairs = list(itertools.combinations(range(k), 2))
    for _ in range(100):
        active[:] = False
        for i, j in pairs:
            if rng.random() < max(cfg.rho, 0.5):
                active[i, j] = True
        d = density_by_group(space, active)
        if all(v >= cfg.rho for v in d.values()):
            return active
    for i, j in pairs:
        active[i, j] = True
    return active


def validate_instance(inst, cfg):
    """List of assumption violations (empty when the instance is valid)."""
    problems = []
    steps = np.diff(inst.f, axis=2)
    if np.any(steps <= 0):
        problems.append("f_j not strictly increasing")
    if inst.f.shape[2] > 2 and np.any(np.diff(steps, axis=2) >= 0):
        problems.append("f_j not strictly concave")
    g = inst.g
    if np.any(g < -TOL) or np.any(g > cfg.G + TOL):
        problems.append("interaction outside [0, G]")
    if np.any(g[..., 0, :] != 0) or np.any(g[..., :, 0] != 0):
        problems.append("interaction non-zero at a zero level")
    if np.any(np.diff(g, axis=-1) < -TOL) or np.any(np.diff(g, axis=-2) < -TOL):
        problems.append("interaction decreasing in a level")
    if cfg.rho > 0:
        d = density_by_group(inst.space, inst.active)
        if any(v < cfg.rho for v in d.values()):
            problems.append("interaction density below rho")
    C = inst.truth.C
    for k, c in enumerate(inst.space.combos):
        for j in range(inst.space.m):
            up = inst.space.up[k, j]
            if up >= 0 and np.any(C[:, up] <= C[:, k]):
                problems.append("cost not strictly increasing in level")
                break
    return sorted(set(problems))


def lemma_roi_ordering(inst):
    """RoI f_j(l)/C(l e_j) strictly decreasing in l for every unit and category."""
    sp = inst.space
    for j in range(sp.m):
        idx = [0]
        for _ in range(sp.levels[j]):
            idx.append(int(sp.up[idx[-1], j]))
        idx = idx[1:]
        roi = inst.truth.Y[:, idx] / inst.truth.C[:, idx]
        if np.any(np.diff(roi, axis=1) >= 0):
            return False
    return True


def _greedy_fill(values, state, budget):
    """Raise single levels by best marginal RoI while affordable (unit skip when not)."""
    sp = values.space
    state = state.copy()
    left = budget
    while True:
        best = None
        for u in range(values.U):
            for j in range(sp.m):
                dst = sp.up[state[u], j]
                if dst < 0:
                    continue
                dc = values.C[u, dst] - values.C[u, state[u]]
                if dc > left + TOL:
                    continue
                s = (values.Y[u, dst] - values.Y[u, state[u]]) / dc
                if best is None or s > best[0]:
                    best = (s, u, dst, dc)
        if best is None or best[0] <= 0:
            return state
        _, u, dst, dc = best
        state[u] = dst
        left -= dc


def exchange_check(values, grid):
    """Lowering any multi-level Qini pick to level 1 and greedily re-spending
    the saved budget never lowers the outcome.  Returns violation count."""
    plan = allocate("qini", values)
    sp = values.space
    rows = np.arange(values.U)
    violations = 0
    for B in grid:
        state = plan.state_at(values.U, B)
        base = values.Y[rows, state].sum()
        for u in range(values.U):
            combo = sp.combos[state[u]]
            for j in np.flatnonzero(combo >= 2):
                low = combo.copy()
                low[j] = 1
                new = state.copy()
                new[u] = sp.index(low)
                saved = values.C[u, state[u]] - values.C[u, new[u]]
                filled = _greedy_fill(values, new, saved)
                if values.Y[rows, filled].sum() < base - TOL:
                    violations += 1
    return violations


def mv_ordering_errors(inst):
    """Per-unit fraction of intensity levels where the MV path misses the best combo."""
    truth, sp = inst.truth, inst.space
    plan = allocate("mv_aucc", inst.predicted)
    misses = 0
    total = 0
    for u in range(truth.U):
        visited = [s.dst for s in plan.steps if s.unit == u]
        for dst in visited:
            q = sp.intensity[dst]
            if q < 2:
                continue
            best = truth.Y[u, sp.groups[q]].max()
            total += 1
            misses += truth.Y[u, dst] < best - TOL
    return misses, total


def evaluate_instance(inst, cfg):
    grid = inst.truth.budget_grid(cfg.budget_points)
    ideal = ideal_curve(inst.truth, grid)
    errors = {}
    for kind in POLICIES:
        curve = policy_curve(kind, inst.predicted, inst.truth, grid, cfg.mcmv_realize)
        errors[kind] = trapezoid(np.abs(ideal - curve), grid)
    E = errors
    return {
        "errors": E,
        "roi_ordering": lemma_roi_ordering(inst),
        "chain": bool(E["mcmv_aucc"] <= E["mv_aucc"] + TOL and E["mv_aucc"] <= E["aucc"] + TOL
                      and E["aucc"] <= E["qini"] + TOL),
        "aucc_le_qini": bool(E["aucc"] <= E["qini"] + TOL),
        "mv_le_aucc": bool(E["mv_aucc"] <= E["aucc"] + TOL),
        "mcmv_le_mv": bool(E["mcmv_aucc"] <= E["mv_aucc"] + TOL),
        "mcmv_lt_mv": bool(E["mcmv_aucc"] < E["mv_aucc"] - TOL),
        "exchange_violations": exchange_check(inst.additive, grid),
    }


def theorem_harness(cfg):
    """Run every instance and aggregate pass rates into a JSON-ready report."""
    instances = gen_theorem_instances(cfg)
    rows = []
    skipped = []
    misses = total = 0
    for i, inst in enumerate(instances):
        problems = validate_instance(inst, cfg)
        if problems:
            skipped.append({"instance": i, "problems": problems})
            continue
        r = evaluate_instance(inst, cfg)
        r["instance"] = i
        rows.append(r)
        a, b = mv_ordering_errors(inst)
        misses += a
        total += b
    n = len(rows)

    def rate(key):
        return float(np.mean([r[key] for r in rows])) if rows else 0.0

    gaps = [r["errors"]["mv_aucc"] - r["errors"]["mcmv_aucc"] for r in rows]
    positive = [g for g in gaps if g > TOL]
    mean_err = {k: float(np.mean([r["errors"][k] for r in rows])) if rows else 0.0 for k in POLICIES}
    report = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "evaluated": n,
        "skipped": skipped,
        "expected_metric_error": mean_err,
        "rates": {
            "roi_ordering": rate("roi_ordering"),
            "chain": rate("chain"),
            "aucc_le_qini": rate("aucc_le_qini"),
            "mv_le_aucc": rate("mv_le_aucc"),
            "mcmv_le_mv": rate("mcmv_le_mv"),
            "mcmv_lt_mv": rate("mcmv_lt_mv"),
        },
        "exchange_violations": int(sum(r["exchange_violations"] for r in rows)),
        "phi_empirical": float(misses / total) if total else 0.0,
        "delta_min_empirical": float(min(positive)) if positive else 0.0,
        "delta_mean": float(np.mean(gaps)) if gaps else 0.0,
        "instances": rows,
    }
    report["passed"] = bool(
        n > 0
        and report["rates"]["roi_ordering"] == 1.0
        and report["rates"]["chain"] >= cfg.chain_threshold
        and (cfg.G == 0 or report["rates"]["mcmv_lt_mv"] > cfg.strict_threshold)
        and report["exchange_violations"] == 0
    )
    return report


def concentrated_vs_distributed(f_steps, g_min, q):
    """Closed-form outcomes of (q,0,...,0) and (1,...,1,q-k+1) for one unit.

    ``f_steps[j]`` lists category j's per-level increments; every active pair
    in the distributed combo contributes at least ``g_min``.
    """
    k = len(f_steps)
    conc = float(np.sum(f_steps[0][:q]))
    last = q - (k - 1)
    dist = float(sum(f_steps[j][0] for j in range(k - 1)) + np.sum(f_steps[k - 1][:last]))
    dist += g_min * k * (k - 1) / 2
    return conc, dist
