"""Two-phase training loop for XTNet and single-phase loop for baselines."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .losses import LossConfig, bce_factual, imbalance_loss, total_loss


class NumericalError(FloatingPointError):
    """Non-finite loss during training; carries the offending position."""

    def __init__(self, epoch, batch, terms):
        self.epoch = epoch
        self.batch = batch
        self.terms = terms
        parts = ", ".join(f"{k}={v!r}" for k, v in terms.items())
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {parts}")


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 20
    batch_size: int = 256
    optimizer: str = "adam"
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    clamp_grad: str = "inward"
    grad_clip: float | None = 0.1
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.loss, dict):
            unknown = set(self.loss) - set(LossConfig.__dataclass_fields__)
            if unknown:
                raise ValueError(f"unknown loss fields: {sorted(unknown)}")
            self.loss = LossConfig(**self.loss)
        self.betas = tuple(float(b) for b in self.betas)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be > 0 or None")
        if self.clamp_grad not in CLAMPS:
            raise ValueError(f"clamp_grad must be one of {sorted(CLAMPS)}")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)


class Optimizer:
    """SGD or Adam over one parameter group; state persists across steps."""

    def __init__(self, params, cfg):
        self.params = list(params)
        self.cfg = cfg
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def clip(self):
        limit = self.cfg.grad_clip
        if limit is None:
            return
        norm = np.sqrt(sum(float(np.sum(p.grad ** 2)) for p in self.params))
        if norm > limit:
            for p in self.params:
                p.grad *= limit / norm

    def step(self):
        self.clip()
        lr = self.cfg.learning_rate
        if self.cfg.optimizer == "sgd":
            for p in self.params:
                p.value -= lr * p.grad
            return
        b1, b2 = self.cfg.betas
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad ** 2
            p.value -= lr * (m / c1) / (np.sqrt(v / c2) + self.cfg.adam_eps)


def is_isolated(T):
    """True where at most one category is nonzero."""
    return np.count_nonzero(np.asarray(T), axis=1) <= 1


def filter_isolated(X, T, Y):
    keep = is_isolated(T)
    return X[keep], T[keep], Y[keep]


def batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i: i + batch_size] for i in range(0, n, batch_size)]


@dataclass
class TrainResult:
    trace: list
    skipped_phase1: int = 0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "factual", "imbalance", "total"])
            for row in self.trace:
                w.writerow([row["epoch"], repr(row["factual"]), repr(row["imbalance"]), repr(row["total"])])


def _check(epoch, b, **terms):
    if not all(np.isfinite(v) for v in terms.values()):
        raise NumericalError(epoch, b, terms)


CLAMPS = {"inward": ad.clamp_inward, "zero": ad.clamp}


def _clamped(node, eps, mode):
    return CLAMPS[mode](node, eps, 1.0 - eps)


def phase1_step(model, opt, X, T, Y, eps, mode="inward"):
    """One BasicNet update on isolated samples; returns the factual loss or None if skipped."""
    Xf, Tf, Yf = filter_isolated(X, T, Y)
    if len(Xf) == 0 or not model.basic:
        return None
    tape = model.tape
    opt.zero_grad()
    pred = _clamped(model.basic_node(tape.const(Xf), Tf), eps, mode)
    loss = bce_factual(pred, Yf)
    tape.backward(loss)
    tape.reset()
    opt.step()
    return float(loss.value)


def phase2_step(model, opt, X, T, Y, lcfg, mode="inward"):
    """One EffectNet + MaskNet update on the full batch with BasicNet frozen."""
    tape = model.tape
    opt.zero_grad()
    raw, _, _, hidden = model.forward(tape.const(X), T, freeze_basic=True)
    fact = bce_factual(_clamped(raw, lcfg.clamp_eps, mode), Y)
    imb = imbalance_loss(hidden, T, lcfg) if lcfg.lambda2 > 0 else tape.const(np.array(0.0))
    total = total_loss(fact, imb, lcfg)
    vals = float(fact.value), float(imb.value), float(total.value)
    if all(np.isfinite(vals)):
        tape.backward(total)
        opt.step()
    tape.reset()
    return vals


def baseline_step(model, opt, X, T, Y, lcfg, mode="inward"):
    tape = model.tape
    opt.zero_grad()
    pred, hidden = model.forward(tape.const(X), T)
    fact = bce_factual(_clamped(pred, lcfg.clamp_eps, mode), Y)
    if getattr(model.cfg, "use_imbalance", False) and lcfg.lambda2 > 0:
        imb = imbalance_loss(hidden, T, lcfg)
    else:
        imb = tape.const(np.array(0.0))
    total = total_loss(fact, imb, lcfg)
    vals = float(fact.value), float(imb.value), float(total.value)
    if all(np.isfinite(vals)):
        tape.backward(total)
        opt.step()
    tape.reset()
    return vals


def train(model, dataset, cfg=None, log=None):
    """Train in place; returns a :class:`TrainResult` with one trace row per epoch.

    Each epoch is a full pass over a seeded permutation of the rows.  XTNet
    batches run the BasicNet step on isolated samples, then the EffectNet +
    MaskNet step on the whole batch.
    """
    cfg = cfg or TrainConfig()
    lcfg = cfg.loss
    X = dataset.features
    T = dataset.treatments
    Y = dataset.targets()
    rng = np.random.default_rng(cfg.seed)
    two_phase = getattr(model, "kind", "") == "xtnet"
    if two_phase:
        opt_basic = Optimizer(model.basic_params, cfg)
        opt_effect = Optimizer(model.effect_params, cfg)
    else:
        opt_all = Optimizer(model.params, cfg)
    result = TrainResult(trace=[])
    for epoch in range(1, cfg.epochs + 1):
        sums = np.zeros(3)
        count = 0
        for b, idx in enumerate(batches(len(X), cfg.batch_size, rng)):
            Xb, Tb, Yb = X[idx], T[idx], Y[idx]
            if two_phase:
                l1 = phase1_step(model, opt_basic, Xb, Tb, Yb, lcfg.clamp_eps, cfg.clamp_grad)
                if l1 is None:
                    result.skipped_phase1 += 1
                elif not np.isfinite(l1):
                    raise NumericalError(epoch, b, {"basic_factual": l1})
                vals = phase2_step(model, opt_effect, Xb, Tb, Yb, lcfg, cfg.clamp_grad)
            else:
                vals = baseline_step(model, opt_all, Xb, Tb, Yb, lcfg, cfg.clamp_grad)
            _check(epoch, b, factual=vals[0], imbalance=vals[1], total=vals[2])
            sums += np.array(vals) * len(idx)
            count += len(idx)
        f, i, t = sums / count
        result.trace.append({"epoch": epoch, "factual": float(f), "imbalance": float(i), "total": float(t)})
        if log:
            log(f"epoch {epoch}: factual={f:.6f} imbalance={i:.6f} total={t:.6f}")
    return result
