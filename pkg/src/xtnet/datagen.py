"""Synthetic benchmarks Syn-1/2/3 with a noiseless potential-outcome oracle.

Each dataset has 8 normalised features, two treatment categories with
``levels[k] + 1`` values each, and one outcome.  Half of the rows (by
default) are observational, with treatment levels driven by the features;
the rest are randomised.  Unpublished constants (coefficients, noise scales,
effect weights) are config fields with documented defaults.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

DATASETS = ("syn1", "syn2", "syn3")
N_COEFFS = 15
OBSERVATIONAL = "observational"
RCT = "rct"


class ConfigError(ValueError):
    """Invalid generator configuration."""


@dataclass
class SynthConfig:
    dataset_id: str = "syn1"
    n_train: int = 64000
    n_test: int = 8000
    feature_dim: int = 8
    coeffs_a: list | None = None
    treatment_coeffs: list | None = None
    weights_w: tuple = (1.0, 1.0, 1.0)
    gaussian_sigma: float = 0.05
    uniform_range: tuple = (-0.05, 0.05)
    levels: tuple = (4, 4)
    treatment_bins: tuple | None = None
    outcome_bins: int | None = None
    obs_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.weights_w = tuple(float(w) for w in self.weights_w)
        self.uniform_range = tuple(float(u) for u in self.uniform_range)
        self.levels = tuple(int(a) for a in self.levels)
        if self.treatment_bins is None:
            self.treatment_bins = tuple(a + 1 for a in self.levels)
        else:
            self.treatment_bins = tuple(int(b) for b in self.treatment_bins)
        self.validate()

    def validate(self):
        if self.dataset_id not in DATASETS:
            raise ConfigError(f"dataset_id must be one of {DATASETS}, got {self.dataset_id!r}")
        if self.n_train < 1 or self.n_test < 0:
            raise ConfigError("n_train must be >= 1 and n_test >= 0")
        if self.feature_dim < 8:
            raise ConfigError("feature_dim must be >= 8 (formulas use x1..x8)")
        if len(self.levels) != 2:
            raise ConfigError("the Syn formulas define exactly two treatment categories")
        if any(a < 1 for a in self.levels):
            raise ConfigError("levels a_k must be >= 1")
        if len(self.treatment_bins) != len(self.levels):
            raise ConfigError("treatment_bins needs one entry per category")
        for a, b in zip(self.levels, self.treatment_bins):
            if b != a + 1:
                raise ConfigError(f"treatment_bins must equal levels + 1 (got {b} bins for {a} levels)")
        if self.outcome_bins is not None and self.outcome_bins < 1:
            raise ConfigError("outcome_bins must be >= 1")
        if not 0.0 <= self.obs_fraction <= 1.0:
            raise ConfigError("obs_fraction must lie in [0, 1]")
        if len(self.weights_w) != 3:
            raise ConfigError("weights_w must hold (w_t1, w_t2, w_t3)")
        if self.gaussian_sigma < 0:
            raise ConfigError("gaussian_sigma must be >= 0")
        lo, hi = self.uniform_range
        if lo > hi:
            raise ConfigError("uniform_range must satisfy a <= b")
        if self.coeffs_a is not None and len(self.coeffs_a) != N_COEFFS:
            raise ConfigError(f"coeffs_a must have {N_COEFFS} entries")

    @property
    def m(self):
        return len(self.levels)

    def to_dict(self):
        d = asdict(self)
        d["weights_w"] = list(self.weights_w)
        d["uniform_range"] = list(self.uniform_range)
        d["levels"] = list(self.levels)
        d["treatment_bins"] = list(self.treatment_bins)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown SynthConfig fields: {sorted(unknown)}")
        return cls(**known)


def minmax_normalize(column):
    """Scale to [0, 1]; a constant column maps to 0.5."""
    v = np.asarray(column, dtype=np.float64)
    if v.size == 0:
        raise ValueError("minmax_normalize: empty column")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full_like(v, 0.5)
    return (v - lo) / (hi - lo)


def bin_index(v, n_bins):
    """Index i in 1..n_bins with b_{i-1} < v <= b_i, b_i = i/n_bins; v=0 goes to bin 1."""
    v = np.asarray(v, dtype=np.float64)
    return np.clip(np.ceil(v * n_bins), 1, n_bins).astype(np.int64)


def all_combos(levels):
    """Every treatment combo, lexicographic, baseline first."""
    return np.array(list(itertools.product(*(range(a + 1) for a in levels))), dtype=np.int64)


@dataclass
class Dataset:
    features: np.ndarray
    treatments: np.ndarray
    outcomes: np.ndarray
    origin: np.ndarray
    levels: tuple
    outcome_bins: int | None = None

    def __post_init__(self):
        n = len(self.features)
        if not (len(self.treatments) == len(self.outcomes) == len(self.origin) == n):
            raise ValueError("Dataset: row counts disagree across fields")
        self.levels = tuple(int(a) for a in self.levels)

    @property
    def n(self):
        return len(self.features)

    @property
    def m(self):
        return self.treatments.shape[1]

    @property
    def s(self):
        return self.outcomes.shape[1]

    def targets(self):
        """Outcomes scaled into [0, 1] for the BCE loss."""
        if self.outcome_bins:
            return self.outcomes / float(self.outcome_bins)
        return self.outcomes

    def subset(self, idx):
        return Dataset(self.features[idx], self.treatments[idx], self.outcomes[idx],
                       self.origin[idx], self.levels, self.outcome_bins)

    def rct_mask(self):
        return self.origin == RCT

    def to_csv(self, path):
        d, m, s = self.features.shape[1], self.m, self.s
        header = [f"x{i + 1}" for i in range(d)] + [f"t{k + 1}" for k in range(m)]
        header += [f"y{j + 1}" for j in range(s)] + ["origin"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(self.n):
                row = [repr(float(v)) for v in self.features[i]]
                row += [str(int(t)) for t in self.treatments[i]]
                if self.outcome_bins:
                    row += [str(int(y)) for y in self.outcomes[i]]
                else:
                    row += [repr(float(y)) for y in self.outcomes[i]]
                row.append(str(self.origin[i]))
                w.writerow(row)

    @classmethod
    def from_csv(cls, path, levels=None, outcome_bins=None):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        xs = [i for i, h in enumerate(header) if h.startswith("x")]
        ts = [i for i, h in enumerate(header) if h.startswith("t")]
        ys = [i for i, h in enumerate(header) if h.startswith("y")]
        oi = header.index("origin")
        arr = np.array([[r[i] for i in xs + ts + ys] for r in body], dtype=np.float64).reshape(len(body), -1)
        X = arr[:, : len(xs)]
        T = arr[:, len(xs): len(xs) + len(ts)].astype(np.int64)
        Y = arr[:, len(xs) + len(ts):]
        origin = np.array([r[oi] for r in body], dtype=object)
        if levels is None:
            levels = tuple(int(v) for v in T.max(axis=0)) if len(T) else (1,) * len(ts)
        return cls(X, T, Y, origin, tuple(levels), outcome_bins)


class PotentialOutcomeOracle:
    """Noiseless normalised outcome y(x, t) for any feature row and combo."""

    def __init__(self, config, coeffs, treatment_coeffs, lo, hi):
        self.config = config
        self.coeffs = np.asarray(coeffs, dtype=np.float64)
        self.treatment_coeffs = np.asarray(treatment_coeffs, dtype=np.float64)
        self.lo = float(lo)
        self.hi = float(hi)

    @property
    def levels(self):
        return self.config.levels

    def raw(self, X, combos):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        combos = np.asarray(combos, dtype=np.int64)
        if combos.ndim == 1:
            combos = np.broadcast_to(combos, (len(X), len(combos)))
        return base_score(self.config.dataset_id, X, self.coeffs) + treatment_effect(
            self.config.dataset_id, X, combos, self.config.levels, self.config.weights_w)

    def __call__(self, X, combos):
        """Normalised noiseless outcomes, shape (n, 1)."""
        span = self.hi - self.lo if self.hi > self.lo else 1.0
        return ((self.raw(X, combos) - self.lo) / span)[:, None]

    def outcome_table(self, X):
        """(n, K, 1) outcomes for every combo in :func:`all_combos` order."""
        combos = all_combos(self.config.levels)
        return np.stack([self(X, c) for c in combos], axis=1)


def true_cate(oracle, x, combo):
    """oracle(x, combo) - oracle(x, t0), shape (n, s)."""
    combo = np.asarray(combo, dtype=np.int64)
    t0 = np.zeros(combo.shape[-1], dtype=np.int64)
    return oracle(x, combo) - oracle(x, t0)


def base_score(dataset_id, X, a):
    x = [None] + [X[:, i] for i in range(8)]  # 1-based like the formulas
    lin = sum(a[i - 1] * x[i] for i in range(1, 9))
    if dataset_id == "syn3":
        return lin
    if dataset_id == "syn2":
        return lin + a[8] * x[1] * x[2] + a[9] * x[3] * x[4] + a[12] * x[5] ** 2 + a[13] * np.sin(x[8])
    return (lin + a[8] * x[1] * x[2] + a[9] * x[3] * x[4] + a[10] * x[4] * x[5] * x[6]
            + a[11] * x[6] * x[8] * x[1] + a[12] * x[5] ** 2 + a[13] * np.sin(x[8])
            + a[14] * np.exp(-x[3]))


def syn1_interaction_log(t1, t2):
    """ln((5 t1 - 1)(t1 + t2 - 1)) where the argument is positive, else 0."""
    arg = (5.0 * t1 - 1.0) * (t1 + t2 - 1.0)
    safe = np.where(arg > 0, arg, 1.0)
    return np.where(arg > 0, np.log(safe), 0.0)


def treatment_effect(dataset_id, X, combos, levels, w):
    x = [None] + [X[:, i] for i in range(8)]
    combos = np.asarray(combos, dtype=np.float64)
    w1, w2, w3 = w
    if dataset_id == "syn1":
        t1, t2 = combos[:, 0], combos[:, 1]
        e1 = 3.0 * w1 * (np.exp(-t1 / 5.0) - np.exp(1.0 / 5.0)) * (
            np.sin(x[3]) - np.exp(-x[7] - x[5]) + np.sqrt(x[3] + x[6] ** 2))
        e2 = -w2 * (np.log(5.0 * t2 + 0.5) - np.log(1.5)) * (
            np.cos(x[3]) - x[4] * x[2] + x[6] ** 2 + np.abs(x[1]))
        e12 = w3 * syn1_interaction_log(t1, t2) * (-x[1] + x[2] ** 3)
        return e1 + e2 + e12
    t1 = combos[:, 0] / levels[0]
    t2 = combos[:, 1] / levels[1]
    if dataset_id == "syn2":
        return (w1 * t1 * (x[1] + x[2] + x[3]) - w2 * t2 * (x[4] + x[5] + x[6])
                + 2.0 * w3 * t1 * t2 * (-x[7] + x[8]))
    return (w1 * t1 * (x[1] + x[2]) - w2 * t2 * (x[4] + x[5])
            + 2.0 * w3 * t1 * t2 * (x[2] - x[6]))


def treatment_score(dataset_id, X, a5):
    """Raw (noiseless) propensity score t for one category."""
    x = [None] + [X[:, i] for i in range(8)]
    if dataset_id == "syn1":
        return (sum(a5[i - 1] * x[i] for i in range(1, 6))
                + sum(a5[i - 1] * x[i] * x[i + 1] for i in range(1, 5))
                + x[1] ** 2 + np.sin(x[3]) + np.exp(-x[5]))
    if dataset_id == "syn2":
        return (sum(a5[i - 1] * x[i] for i in range(1, 4))
                + sum(a5[i - 1] * x[i] * x[i + 1] for i in range(1, 4)) + x[3] ** 2)
    return sum(a5[i - 1] * x[i] for i in range(1, 4))


def _noise(rng, cfg, n, gaussian, uniform):
    out = np.zeros(n)
    if gaussian:
        out += rng.normal(0.0, cfg.gaussian_sigma, size=n)
    if uniform:
        out += rng.uniform(cfg.uniform_range[0], cfg.uniform_range[1], size=n)
    return out


# (gaussian, uniform) noise terms per dataset for the treatment score / outcome
_NOISE = {
    "syn1": ((True, True), (True, True)),
    "syn2": ((False, True), (True, True)),
    "syn3": ((False, True), (True, False)),
}


def resolve_coefficients(cfg):
    """Return (coeffs_a, treatment_coeffs), drawing unset ones from the seed."""
    rng = np.random.default_rng([cfg.seed, 1])
    drawn_a = rng.uniform(-1.0, 1.0, size=N_COEFFS)
    drawn_t = rng.uniform(-1.0, 1.0, size=(cfg.m, 5))
    a = np.asarray(cfg.coeffs_a, dtype=np.float64) if cfg.coeffs_a is not None else drawn_a
    if cfg.treatment_coeffs is not None:
        tc = np.asarray(cfg.treatment_coeffs, dtype=np.float64)
        if tc.shape != (cfg.m, 5):
            raise ConfigError(f"treatment_coeffs must have shape ({cfg.m}, 5)")
    else:
        tc = drawn_t
        tc[0] = a[:5]  # category 1 follows the table's a_1..a_5
    return a, tc


def gen_synthetic(config):
    """Generate (train, test, oracle) for a validated :class:`SynthConfig`."""
    if isinstance(config, dict):
        config = SynthConfig.from_dict(config)
    config.validate()
    cfg = config
    a, tc = resolve_coefficients(cfg)
    rng = np.random.default_rng([cfg.seed, 2])
    n = cfg.n_train + cfg.n_test
    raw = rng.uniform(0.0, 1.0, size=(n, cfg.feature_dim))
    X = np.column_stack([minmax_normalize(raw[:, j]) for j in range(cfg.feature_dim)])

    n_obs_train = int(round(cfg.obs_fraction * cfg.n_train))
    n_obs_test = int(round(cfg.obs_fraction * cfg.n_test))
    is_obs = np.zeros(n, dtype=bool)
    is_obs[rng.permutation(cfg.n_train)[:n_obs_train]] = True
    is_obs[cfg.n_train + rng.permutation(cfg.n_test)[:n_obs_test]] = True

    t_noise, y_noise = _NOISE[cfg.dataset_id]
    T = np.zeros((n, cfg.m), dtype=np.int64)
    for k in range(cfg.m):
        score = treatment_score(cfg.dataset_id, X, tc[k]) + _noise(rng, cfg, n, *t_noise)
        obs_idx = np.flatnonzero(is_obs)
        if len(obs_idx):
            v = minmax_normalize(score[obs_idx])
            T[obs_idx, k] = bin_index(v, cfg.treatment_bins[k]) - 1
        rct_idx = np.flatnonzero(~is_obs)
        T[rct_idx, k] = rng.integers(0, cfg.levels[k] + 1, size=len(rct_idx))

    clean = base_score(cfg.dataset_id, X, a) + treatment_effect(cfg.dataset_id, X, T, cfg.levels, cfg.weights_w)
    noisy = clean + _noise(rng, cfg, n, *y_noise)
    lo, hi = float(noisy.min()), float(noisy.max())
    y = minmax_normalize(noisy)
    if cfg.outcome_bins:
        y = bin_index(y, cfg.outcome_bins).astype(np.float64)
    Y = y[:, None]
    origin = np.where(is_obs, OBSERVATIONAL, RCT).astype(object)

    oracle = PotentialOutcomeOracle(cfg, a, tc, lo, hi)
    tr = slice(0, cfg.n_train)
    te = slice(cfg.n_train, n)
    train = Dataset(X[tr], T[tr], Y[tr], origin[tr], cfg.levels, cfg.outcome_bins)
    test = Dataset(X[te], T[te], Y[te], origin[te], cfg.levels, cfg.outcome_bins)
    return train, test, oracle


def manifest_dict(config, oracle):
    a, tc = oracle.coeffs, oracle.treatment_coeffs
    d = config.to_dict()
    d["coeffs_a"] = [float(v) for v in a]
    d["treatment_coeffs"] = [[float(v) for v in row] for row in tc]
    return {"synth_config": d, "outcome_bounds": [oracle.lo, oracle.hi]}


def oracle_from_manifest(manifest):
    """Rebuild the oracle from a dataset manifest written by :func:`write_dataset`."""
    if isinstance(manifest, (str, Path)):
        manifest = json.loads(Path(manifest).read_text())
    cfg = SynthConfig.from_dict(manifest["synth_config"])
    lo, hi = manifest["outcome_bounds"]
    return PotentialOutcomeOracle(cfg, cfg.coeffs_a, cfg.treatment_coeffs, lo, hi)


def write_dataset(out_dir, config, train, test, oracle):
    """Write train.csv, test.csv and dataset.json; return the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"train": out / "train.csv", "test": out / "test.csv", "manifest": out / "dataset.json"}
    train.to_csv(paths["train"])
    test.to_csv(paths["test"])
    paths["manifest"].write_text(json.dumps(manifest_dict(config, oracle), indent=2, sort_keys=True))
    return paths


def load_dataset(out_dir):
    """Inverse of :func:`write_dataset`: (train, test, oracle)."""
    out = Path(out_dir)
    manifest = json.loads((out / "dataset.json").read_text())
    oracle = oracle_from_manifest(manifest)
    cfg = oracle.config
    train = Dataset.from_csv(out / "train.csv", cfg.levels, cfg.outcome_bins)
    test = Dataset.from_csv(out / "test.csv", cfg.levels, cfg.outcome_bins)
    return train, test, oracle
