"""Simplified comparison estimators: concat MLP, multi-head, dual-tower interaction."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from math import prod

import numpy as np

from . import autodiff as ad
from .model import ACTIVATIONS, Dense, Estimator, ModelError, encode_combos

BASELINE_KINDS = ("blr_concat", "multi_head", "interaction_linear")


@dataclass
class BaselineConfig:
    kind: str = "multi_head"
    input_dim: int = 8
    levels: tuple = (4, 4)
    s: int = 1
    widths: tuple = (32, 32)
    activation: str = "relu"
    clamp_eps: float = 1e-4
    use_imbalance: bool = False
    seed: int = 0

    def __post_init__(self):
        self.levels = tuple(int(a) for a in self.levels)
        self.widths = tuple(int(w) for w in self.widths)
        if self.kind not in BASELINE_KINDS:
            raise ModelError(f"baseline kind must be one of {BASELINE_KINDS}")
        if not self.widths or any(w < 1 for w in self.widths):
            raise ModelError("baseline widths must be non-empty and positive")
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"activation must be one of {sorted(ACTIVATIONS)}")
        if self.kind == "interaction_linear" and len(self.levels) != 2:
            raise ModelError("interaction_linear requires exactly m = 2 categories")
        if self.use_imbalance and self.kind != "blr_concat":
            raise ModelError("use_imbalance is only wired for blr_concat")

    @property
    def m(self):
        return len(self.levels)

    @property
    def n_heads(self):
        return prod(a + 1 for a in self.levels)

    def to_dict(self):
        d = asdict(self)
        d["levels"] = list(self.levels)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


class BLRConcat(Estimator):
    """MLP over x; the normalised combo joins at the middle hidden layer."""

    kind = "blr_concat"

    def __init__(self, cfg):
        self.cfg = cfg
        self.clamp_eps = cfg.clamp_eps
        self.tape = ad.Tape(cfg.seed)
        w = cfg.widths
        cut = max(1, len(w) // 2)
        self.lower = Dense(self.tape, (cfg.input_dim,) + w[:cut], cfg.activation, "blr.lower")
        upper = (w[cut - 1] + cfg.m,) + w[cut:] + (cfg.s,)
        self.upper = Dense(self.tape, upper, cfg.activation, "blr.upper", final=ad.sigmoid)

    @property
    def params(self):
        return self.lower.params + self.upper.params

    def forward(self, x, T):
        h = self.lower(x)
        tenc = self.tape.const(encode_combos(T, self.cfg.levels))
        return self.upper(ad.concat([h, tenc], axis=1), activate_last=False), h

    def raw_node(self, x, T):
        return self.forward(x, T)[0]


class MultiHead(Estimator):
    """Shared trunk with one sigmoid head per combo."""

    kind = "multi_head"

    def __init__(self, cfg):
        self.cfg = cfg
        self.clamp_eps = cfg.clamp_eps
        self.tape = ad.Tape(cfg.seed)
        self.trunk = Dense(self.tape, (cfg.input_dim,) + cfg.widths, cfg.activation, "mh.trunk")
        h = cfg.widths[-1]
        K = cfg.n_heads
        self.head_W = self.tape.param((K, h, cfg.s), fan_in=h, name="mh.head_W")
        self.head_b = self.tape.param((K, cfg.s), fan_in=h, name="mh.head_b")
        # combo -> head index, lexicographic like all_combos
        self._radix = np.cumprod([1] + [a + 1 for a in cfg.levels[::-1]])[:-1][::-1]

    @property
    def params(self):
        return self.trunk.params + [self.head_W, self.head_b]

    def head_index(self, T):
        return np.asarray(T, dtype=np.int64) @ self._radix

    def forward(self, x, T):
        h = self.trunk(x)
        onehot = np.zeros((len(T), self.cfg.n_heads))
        onehot[np.arange(len(T)), self.head_index(T)] = 1.0
        sel = self.tape.const(onehot)
        z = ad.add(ad.einsum("nh,khs,nk->ns", h, self.head_W, sel), ad.einsum("ks,nk->ns", self.head_b, sel))
        return ad.sigmoid(z), h

    def raw_node(self, x, T):
        return self.forward(x, T)[0]


class InteractionLinear(Estimator):
    """Control tower y0 plus elasticity tower (z1, z2, z3) bilinear in (t1', t2')."""

    kind = "interaction_linear"

    def __init__(self, cfg):
        self.cfg = cfg
        self.clamp_eps = cfg.clamp_eps
        self.tape = ad.Tape(cfg.seed)
        dims = (cfg.input_dim,) + cfg.widths
        self.control = Dense(self.tape, dims + (cfg.s,), cfg.activation, "il.control")
        self.elastic = Dense(self.tape, dims + (3 * cfg.s,), cfg.activation, "il.elastic")

    @property
    def params(self):
        return self.control.params + self.elastic.params

    def towers(self, x):
        y0 = self.control(x, activate_last=False)
        z = ad.reshape(self.elastic(x, activate_last=False), (-1, 3, self.cfg.s))
        return y0, z

    def forward(self, x, T):
        y0, z = self.towers(x)
        t = encode_combos(T, self.cfg.levels)
        feats = self.tape.const(np.column_stack([t[:, 0], t[:, 1], t[:, 0] * t[:, 1]]))
        return ad.add(y0, ad.einsum("nks,nk->ns", z, feats)), None

    def raw_node(self, x, T):
        return self.forward(x, T)[0]


_BUILDERS = {"blr_concat": BLRConcat, "multi_head": MultiHead, "interaction_linear": InteractionLinear}


def build_baseline(cfg):
    if isinstance(cfg, dict):
        cfg = BaselineConfig.from_dict(cfg)
    return _BUILDERS[cfg.kind](cfg)

