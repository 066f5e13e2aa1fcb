"""XTNet: BasicNet chain heads + mask-modulated EffectNet.

Prediction for outcome j is ``clamp(basic_j(x, t) + effect_j(x; masks(t)))``.
BasicNet j looks only at the level of its dominant category k*_j and is
monotone in that level.  EffectNet's backbone weights are multiplied
elementwise by masks that MaskNet produces from the normalised combo.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad

CHECKPOINT_VERSION = 1
ACTIVATIONS = {"relu": ad.relu, "sigmoid": ad.sigmoid, "tanh": ad.tanh}


class ModelError(ValueError):
    pass


@dataclass
class XTNetConfig:
    input_dim: int = 8
    levels: tuple = (4, 4)
    s: int = 1
    trunk_widths: tuple = (32, 32)
    head_widths: tuple = (16,)
    backbone_widths: tuple = (32, 32)
    effect_head_widths: tuple = (16,)
    activation: str = "relu"
    clamp_eps: float = 1e-4
    mask_sigmoid: bool = False
    use_basicnet: bool = True
    imbalance_features: str = "unmasked"
    dominant: list | None = None
    seed: int = 0

    def __post_init__(self):
        self.levels = tuple(int(a) for a in self.levels)
        for name in ("trunk_widths", "head_widths", "backbone_widths", "effect_head_widths"):
            setattr(self, name, tuple(int(w) for w in getattr(self, name)))
        self.validate()

    def validate(self):
        if self.input_dim < 1 or self.s < 1:
            raise ModelError("input_dim and s must be >= 1")
        if not self.levels or any(a < 1 for a in self.levels):
            raise ModelError("levels must be non-empty with every a_k >= 1")
        if len(self.backbone_widths) < 1:
            raise ModelError("EffectNet backbone needs K >= 1 layers")
        widths = self.trunk_widths + self.head_widths + self.backbone_widths + self.effect_head_widths
        if any(w < 1 for w in widths):
            raise ModelError("layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"activation must be one of {sorted(ACTIVATIONS)}")
        if not 0.0 < self.clamp_eps < 0.5:
            raise ModelError("clamp_eps must lie in (0, 0.5)")
        if self.imbalance_features not in ("unmasked", "masked"):
            raise ModelError("imbalance_features must be 'unmasked' or 'masked'")
        if self.dominant is not None:
            if len(self.dominant) != self.s or any(not 0 <= k < self.m for k in self.dominant):
                raise ModelError("dominant must give one category index per outcome")

    @property
    def m(self):
        return len(self.levels)

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class DominantEffectTable:
    gaps: np.ndarray  # (s, m)
    source: str = "rct_estimate"

    @property
    def dominant(self):
        # np.argmax returns the first maximum, i.e. the lowest category index
        return [int(k) for k in np.argmax(self.gaps, axis=1)]


def estimate_dominance(dataset):
    """Stratified RCT gap E[y | t_i > 0] - E[y | t_i = 0] per outcome and category.

    Strata match on the levels of every other category; strata are weighted
    by their treated count.
    """
    rct = dataset.rct_mask()
    if not np.any(rct):
        raise ModelError("estimate_dominance: no RCT rows; pass a dominance override "
                         "(XTNetConfig.dominant) instead")
    T = dataset.treatments[rct]
    Y = dataset.targets()[rct]
    m = T.shape[1]
    gaps = np.zeros((Y.shape[1], m))
    for i in range(m):
        others = np.delete(T, i, axis=1)
        keys, inv = np.unique(others, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        total = np.zeros(Y.shape[1])
        weight = 0
        for s in range(len(keys)):
            rows = inv == s
            treated = rows & (T[:, i] > 0)
            control = rows & (T[:, i] == 0)
            nt = int(treated.sum())
            if nt == 0 or not control.any():
                continue
            total += nt * (Y[treated].mean(axis=0) - Y[control].mean(axis=0))
            weight += nt
        if weight == 0:
            raise ModelError(f"estimate_dominance: RCT rows never isolate category {i + 1}")
        gaps[:, i] = total / weight
    return DominantEffectTable(gaps, "rct_estimate")


def encode_combos(T, levels):
    """Normalised levels t' = level / a_k as float rows."""
    T = np.atleast_2d(np.asarray(T, dtype=np.float64))
    return T / np.asarray(levels, dtype=np.float64)


class Dense:
    """Stack of affine layers with an activation after each hidden layer."""

    def __init__(self, tape, sizes, activation, name, final=None):
        self.layers = []
        self.activation = ACTIVATIONS[activation]
        self.final = final
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            W = tape.param((a, b), fan_in=a, name=f"{name}.W{i}")
            bias = tape.param((b,), fan_in=a, name=f"{name}.b{i}")
            self.layers.append((W, bias))

    @property
    def params(self):
        return [p for layer in self.layers for p in layer]

    def __call__(self, h, activate_last=True):
        for i, (W, b) in enumerate(self.layers):
            h = ad.add_row(ad.matmul(h, W), b)
            last = i == len(self.layers) - 1
            if not last or activate_last:
                h = self.activation(h)
        if self.final is not None:
            h = self.final(h)
        return h


class BasicNet:
    """Trunk plus one sigmoid head per level of the dominant category."""

    def __init__(self, tape, cfg, n_levels, name):
        self.n_levels = n_levels
        self.trunk = Dense(tape, (cfg.input_dim,) + cfg.trunk_widths, cfg.activation, f"{name}.trunk")
        h = cfg.trunk_widths[-1] if cfg.trunk_widths else cfg.input_dim
        self.heads = [Dense(tape, (h,) + cfg.head_widths + (1,), cfg.activation, f"{name}.head{j + 1}")
                      for j in range(n_levels)]
        # suffix[j, l] = 1 when head j contributes to level l + 1
        self._suffix = np.triu(np.ones((n_levels, n_levels))).T

    @property
    def params(self):
        return self.trunk.params + [p for head in self.heads for p in head.params]

    def logits(self, x):
        h = self.trunk(x)
        return ad.concat([head(h, activate_last=False) for head in self.heads], axis=1)

    def gammas(self, x):
        return ad.sigmoid(self.logits(x))

    def level_outputs(self, x):
        """(n, a+1) outputs for levels 0..a; column 0 is identically 0."""
        logs = ad.matmul(ad.log_sigmoid(self.logits(x)), x.tape.const(self._suffix))
        zeros = x.tape.const(np.zeros((x.value.shape[0], 1)))
        return ad.concat([zeros, ad.exp(logs)], axis=1)

    def __call__(self, x, level):
        return ad.pick(self.level_outputs(x), level)


class MaskNet:
    """One affine map per backbone layer from t' to that layer's (weight, bias) masks."""

    def __init__(self, tape, m, shapes):
        self.shapes = shapes
        self.maps = []
        for i, (a, b) in enumerate(shapes):
            size = a * b + b
            W = tape.param((m, size), fan_in=m, name=f"mask.W{i}")
            # bias starts at 1 so the first forward pass is close to the unmasked backbone
            bias = tape.param((size,), name=f"mask.b{i}", init=np.ones(size))
            self.maps.append((W, bias))

    @property
    def params(self):
        return [p for mp in self.maps for p in mp]

    def __call__(self, tenc, sigmoid=False):
        masks = []
        for (a, b), (W, bias) in zip(self.shapes, self.maps):
            flat = ad.add_row(ad.matmul(tenc, W), bias)
            if sigmoid:
                flat = ad.sigmoid(flat)
            n = tenc.value.shape[0]
            mW = ad.reshape(ad.take(flat, np.arange(a * b), axis=1), (n, a, b))
            mb = ad.take(flat, np.arange(a * b, a * b + b), axis=1)
            masks.append((mW, mb))
        return masks


class EffectNet:
    """Masked linear backbone followed by the g^effect head with final tanh."""

    def __init__(self, tape, cfg):
        sizes = (cfg.input_dim,) + cfg.backbone_widths
        self.shapes = list(zip(sizes[:-1], sizes[1:]))
        self.backbone = []
        for i, (a, b) in enumerate(self.shapes):
            self.backbone.append((tape.param((a, b), fan_in=a, name=f"effect.W{i}"),
                                  tape.param((b,), fan_in=a, name=f"effect.b{i}")))
        self.head = Dense(tape, (sizes[-1],) + cfg.effect_head_widths + (cfg.s,), cfg.activation,
                          "effect.head", final=ad.tanh)

    @property
    def params(self):
        return [p for layer in self.backbone for p in layer] + self.head.params

    def hidden(self, x, masks):
        if len(masks) != len(self.backbone):
            raise ad.ShapeError("effectnet", (len(masks),), (len(self.backbone),),
                                detail="one mask pair per backbone layer")
        h = x
        n = x.value.shape[0]
        for (W, b), (mW, mb) in zip(self.backbone, masks):
            if mW.value.shape != (n,) + W.value.shape or mb.value.shape != (n,) + b.value.shape:
                raise ad.ShapeError("effectnet", mW.value.shape, W.value.shape, detail="mask shape")
            # plain layer plus a (mask - 1) correction: all-ones masks reproduce it bit for bit
            base = ad.add_row(ad.matmul(h, W), b)
            dW = ad.einsum("nio,io,ni->no", ad.shift(mW, -1.0), W, h)
            db = ad.einsum("no,o->no", ad.shift(mb, -1.0), b)
            h = ad.add(base, ad.add(dW, db))
        return h

    def unmasked_hidden(self, x):
        h = x
        for W, b in self.backbone:
            h = ad.add_row(ad.matmul(h, W), b)
        return h

    def __call__(self, x, masks):
        h = self.hidden(x, masks)
        return self.head(h, activate_last=False), h


class Estimator:
    """Shared prediction helpers; subclasses implement :meth:`raw_node`."""

    kind = "estimator"

    def raw_node(self, X, T):
        raise NotImplementedError

    @property
    def params(self):
        raise NotImplementedError

    def predict_raw(self, X, T):
        """Pre-clamp predictions as a plain array, shape (n, s)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        T = np.asarray(T, dtype=np.int64)
        if T.ndim == 1:
            T = np.broadcast_to(T, (len(X), len(T)))
        self.tape.reset()
        out = self.raw_node(self.tape.const(X), T).value.copy()
        self.tape.reset()
        return out

    def predict(self, X, T):
        eps = self.clamp_eps
        return np.clip(self.predict_raw(X, T), eps, 1.0 - eps)

    def predicted_cate(self, X, combo):
        combo = np.asarray(combo, dtype=np.int64)
        return self.predict_raw(X, combo) - self.predict_raw(X, np.zeros_like(combo))

    def cate_table(self, X, combos):
        """(n, K, s) predicted CATE for every combo row of ``combos``."""
        base = self.predict_raw(X, np.zeros(combos.shape[1], dtype=np.int64))
        return np.stack([self.predict_raw(X, c) - base for c in combos], axis=1)

    def named_params(self):
        return {p.name: p for p in self.params}

    def state_dict(self):
        return {name: p.value.copy() for name, p in self.named_params().items()}

    def load_state_dict(self, state):
        named = self.named_params()
        missing = set(named) - set(state)
        if missing:
            raise ModelError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for name, p in named.items():
            if state[name].shape != p.value.shape:
                raise ModelError(f"parameter {name}: shape {state[name].shape} != {p.value.shape}")
            p.value[...] = state[name]


class XTNet(Estimator):
    kind = "xtnet"

    def __init__(self, cfg, dominance=None):
        self.cfg = cfg
        self.clamp_eps = cfg.clamp_eps
        if cfg.dominant is not None:
            self.dominant = list(cfg.dominant)
        elif dominance is not None:
            self.dominant = dominance.dominant
        else:
            self.dominant = [0] * cfg.s
        self.tape = ad.Tape(cfg.seed)
        tape = self.tape
        self.basic = []
        if cfg.use_basicnet:
            self.basic = [BasicNet(tape, cfg, cfg.levels[k], f"basic{j + 1}")
                          for j, k in enumerate(self.dominant)]
        self.effect = EffectNet(tape, cfg)
        self.masknet = MaskNet(tape, cfg.m, self.effect.shapes)

    @property
    def basic_params(self):
        return [p for net in self.basic for p in net.params]

    @property
    def effect_params(self):
        return self.effect.params + self.masknet.params

    @property
    def params(self):
        return self.basic_params + self.effect_params

    def masks(self, T):
        return self.masknet(self.tape.const(encode_combos(T, self.cfg.levels)), self.cfg.mask_sigmoid)

    def basic_node(self, x, T):
        """(n, s) BasicNet outputs; zeros when BasicNet is ablated."""
        if not self.basic:
            return self.tape.const(np.zeros((x.value.shape[0], self.cfg.s)))
        cols = [net(x, T[:, k]) for net, k in zip(self.basic, self.dominant)]
        return ad.concat([ad.reshape(c, (-1, 1)) for c in cols], axis=1)

    def forward(self, x, T, freeze_basic=False):
        """Return (pre-clamp prediction, basic, effect, balancing features) nodes.

        The balancing features are the backbone output with all-ones masks
        (shared across treatments) unless ``imbalance_features == "masked"``.
        """
        T = np.asarray(T, dtype=np.int64)
        basic = self.basic_node(x, T)
        if freeze_basic:
            basic = ad.detach(basic)
        effect, hidden = self.effect(x, self.masks(T))
        if self.cfg.imbalance_features == "unmasked":
            hidden = self.effect.unmasked_hidden(x)
        return ad.add(basic, effect), basic, effect, hidden

    def raw_node(self, x, T):
        return self.forward(x, T)[0]


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model, path_prefix, extra=None):
    """Write ``<prefix>.npz`` (tensors) and ``<prefix>.json`` (manifest)."""
    prefix = Path(path_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    np.savez(prefix.with_suffix(".npz"), **state)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "config": model.cfg.to_dict(),
        "dominant": getattr(model, "dominant", None),
        "shapes": {k: list(v.shape) for k, v in state.items()},
    }
    if extra:
        manifest.update(extra)
    prefix.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return prefix.with_suffix(".npz"), prefix.with_suffix(".json")


def load_checkpoint(path_prefix):
    from .baselines import BASELINE_KINDS, BaselineConfig, build_baseline

    prefix = Path(path_prefix)
    if prefix.suffix in (".npz", ".json"):
        prefix = prefix.with_suffix("")
    manifest = json.loads(prefix.with_suffix(".json").read_text())
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise ModelError(f"unsupported checkpoint version {manifest.get('format_version')}")
    kind = manifest["kind"]
    if kind == "xtnet":
        cfg = XTNetConfig.from_dict(manifest["config"])
        cfg.dominant = manifest["dominant"]
        model = XTNet(cfg)
    elif kind in BASELINE_KINDS:
        model = build_baseline(BaselineConfig.from_dict(manifest["config"]))
    else:
        raise ModelError(f"unknown model kind {kind!r}")
    with np.load(prefix.with_suffix(".npz")) as data:
        model.load_state_dict({k: data[k] for k in data.files})
    return model, manifest
