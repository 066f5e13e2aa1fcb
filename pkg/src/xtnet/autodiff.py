"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` owns the random generator used for parameter init and records
every intermediate :class:`Node` in creation order, which is a valid
topological order.  Parameters are persistent leaves; intermediate nodes are
dropped with :meth:`Tape.reset` after each optimisation step.

Elementwise binary ops require identical shapes.  The few broadcasts the
networks need (bias rows, Sinkhorn potentials) are separate, explicit ops.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "tape", "requires_grad", "name")

    def __init__(self, value, tape, parents=(), backward_fn=None, op="leaf",
                 requires_grad=False, name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"

    # Operator sugar; all of it routes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Node registry plus the seeded generator used for parameter init."""

    def __init__(self, seed=0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.nodes = []
        self.params = []

    def param(self, shape, fan_in=None, name=None, init=None):
        """Create a trainable leaf, uniform in +-sqrt(1/fan_in) unless ``init`` is given."""
        shape = tuple(shape)
        if init is not None:
            value = np.array(init, dtype=np.float64).reshape(shape)
        else:
            if fan_in is None:
                fan_in = shape[-1] if len(shape) > 1 else shape[0]
            bound = np.sqrt(1.0 / max(fan_in, 1))
            value = self.rng.uniform(-bound, bound, size=shape)
        node = Node(value, self, requires_grad=True, name=name)
        node.zero_grad()
        self.params.append(node)
        return node

    def const(self, array):
        return Node(np.asarray(array, dtype=np.float64), self)

    def record(self, node):
        self.nodes.append(node)
        return node

    def reset(self):
        self.nodes = []

    def backward(self, root):
        """Accumulate d(root)/d(leaf) into every reachable leaf's ``grad``."""
        if root.value.size != 1:
            raise ShapeError("backward", root.value.shape, detail="root must be scalar")
        for node in self.nodes:
            node.grad = None
        root.grad = np.ones_like(root.value)
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            node.backward_fn(node.grad)
        grads = {}
        for p in self.params:
            grads[id(p)] = p.grad
        return grads


def backward(root):
    return root.tape.backward(root)


def _as_node(x, tape):
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x, dtype=np.float64), tape)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise TypeError("at least one operand must be a Node")


def _acc(node, g):
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        node.grad = node.grad + g


def make_node(value, parents, backward_fn, op):
    """Register a new node; ``backward_fn(grad)`` must call :func:`accumulate`."""
    tape = parents[0].tape
    req = any(p.requires_grad for p in parents)
    node = Node(value, tape, tuple(parents), backward_fn if req else None, op, req)
    return tape.record(node)


accumulate = _acc


def _same(op, a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError(op, a.value.shape, b.value.shape)


def add(a, b):
    tape = _tape_of(a, b)
    a, b = _as_node(a, tape), _as_node(b, tape)
    _same("add", a, b)

    def bw(g):
        _acc(a, g)
        _acc(b, g)

    return make_node(a.value + b.value, (a, b), bw, "add")


def sub(a, b):
    tape = _tape_of(a, b)
    a, b = _as_node(a, tape), _as_node(b, tape)
    _same("sub", a, b)

    def bw(g):
        _acc(a, g)
        _acc(b, -g)

    return make_node(a.value - b.value, (a, b), bw, "sub")


def mul(a, b):
    tape = _tape_of(a, b)
    a, b = _as_node(a, tape), _as_node(b, tape)
    _same("mul", a, b)

    def bw(g):
        _acc(a, g * b.value)
        _acc(b, g * a.value)

    return make_node(a.value * b.value, (a, b), bw, "mul")


def scale(a, c):
    def bw(g):
        _acc(a, g * c)

    return make_node(a.value * c, (a,), bw, "scale")


def shift(a, c):
    def bw(g):
        _acc(a, g)

    return make_node(a.value + c, (a,), bw, "shift")


def matmul(a, b):
    tape = _tape_of(a, b)
    a, b = _as_node(a, tape), _as_node(b, tape)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError("matmul", a.value.shape, b.value.shape)

    def bw(g):
        _acc(a, g @ b.value.T)
        _acc(b, a.value.T @ g)

    return make_node(a.value @ b.value, (a, b), bw, "matmul")


def add_row(a, v):
    """(n, m) + (m,) broadcast along rows; used for biases."""
    tape = _tape_of(a, v)
    a, v = _as_node(a, tape), _as_node(v, tape)
    if a.value.ndim != 2 or v.value.shape != (a.value.shape[1],):
        raise ShapeError("add_row", a.value.shape, v.value.shape)

    def bw(g):
        _acc(a, g)
        _acc(v, g.sum(axis=0))

    return make_node(a.value + v.value[None, :], (a, v), bw, "add_row")


def add_col(a, v):
    """(n, m) + (n,) broadcast along columns."""
    tape = _tape_of(a, v)
    a, v = _as_node(a, tape), _as_node(v, tape)
    if a.value.ndim != 2 or v.value.shape != (a.value.shape[0],):
        raise ShapeError("add_col", a.value.shape, v.value.shape)

    def bw(g):
        _acc(a, g)
        _acc(v, g.sum(axis=1))

    return make_node(a.value + v.value[:, None], (a, v), bw, "add_col")


def sigmoid(a):
    out = expit(a.value)

    def bw(g):
        _acc(a, g * out * (1.0 - out))

    return make_node(out, (a,), bw, "sigmoid")


def log_sigmoid(a):
    """log(sigmoid(a)) without underflow for very negative inputs."""
    out = -np.logaddexp(0.0, -a.value)

    def bw(g):
        _acc(a, g * expit(-a.value))

    return make_node(out, (a,), bw, "log_sigmoid")


def tanh(a):
    out = np.tanh(a.value)

    def bw(g):
        _acc(a, g * (1.0 - out * out))

    return make_node(out, (a,), bw, "tanh")


def relu(a):
    mask = a.value > 0

    def bw(g):
        _acc(a, g * mask)

    return make_node(np.where(mask, a.value, 0.0), (a,), bw, "relu")


def log(a):
    def bw(g):
        _acc(a, g / a.value)

    return make_node(np.log(a.value), (a,), bw, "log")


def exp(a):
    out = np.exp(a.value)

    def bw(g):
        _acc(a, g * out)

    return make_node(out, (a,), bw, "exp")


def _expand(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    shape = a.value.shape

    def bw(g):
        _acc(a, _expand(g, shape, axis))

    return make_node(np.asarray(np.sum(a.value, axis=axis)), (a,), bw, "sum")


def mean(a, axis=None):
    shape = a.value.shape
    count = a.value.size if axis is None else shape[axis]

    def bw(g):
        _acc(a, _expand(g, shape, axis) / count)

    return make_node(np.asarray(np.mean(a.value, axis=axis)), (a,), bw, "mean")


def logsumexp(a, axis):
    zmax = np.max(a.value, axis=axis, keepdims=True)
    ez = np.exp(a.value - zmax)
    s = np.sum(ez, axis=axis, keepdims=True)
    out = np.squeeze(np.log(s) + zmax, axis=axis)
    soft = ez / s

    def bw(g):
        _acc(a, np.expand_dims(g, axis) * soft)

    return make_node(out, (a,), bw, "logsumexp")


def concat(nodes, axis=0):
    nodes = list(nodes)
    tape = _tape_of(*nodes)
    nodes = [_as_node(n, tape) for n in nodes]
    ref = list(nodes[0].value.shape)
    for n in nodes[1:]:
        other = list(n.value.shape)
        if len(other) != len(ref) or any(o != r for k, (o, r) in enumerate(zip(other, ref)) if k != axis % len(ref)):
            raise ShapeError("concat", *(x.value.shape for x in nodes))
    sizes = [n.value.shape[axis] for n in nodes]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        for n, part in zip(nodes, np.split(g, cuts, axis=axis)):
            _acc(n, part)

    return make_node(np.concatenate([n.value for n in nodes], axis=axis), tuple(nodes), bw, "concat")


def clamp(a, lo, hi):
    """Clip into [lo, hi]; the gradient is zero wherever clipping is active."""
    inside = (a.value >= lo) & (a.value <= hi)

    def bw(g):
        _acc(a, g * inside)

    return make_node(np.clip(a.value, lo, hi), (a,), bw, "clamp")


def clamp_inward(a, lo, hi):
    """Clip into [lo, hi]; at a clipped entry the gradient survives only if a
    descent step along it would move the entry back inside the interval."""
    below = a.value < lo
    above = a.value > hi

    def bw(g):
        keep = ~((below & (g > 0)) | (above & (g < 0)))
        _acc(a, g * keep)

    return make_node(np.clip(a.value, lo, hi), (a,), bw, "clamp_inward")


def reshape(a, shape):
    old = a.value.shape

    def bw(g):
        _acc(a, g.reshape(old))

    return make_node(a.value.reshape(shape), (a,), bw, "reshape")


def take(a, idx, axis=0):
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.value.shape

    def bw(g):
        full = np.zeros(shape)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        _acc(a, full)

    return make_node(np.take(a.value, idx, axis=axis), (a,), bw, "take")


def pick(a, idx):
    """Row-wise gather: ``out[i] = a[i, idx[i]]`` for a 2-D ``a``."""
    idx = np.asarray(idx, dtype=np.int64)
    if a.value.ndim != 2 or idx.shape != (a.value.shape[0],):
        raise ShapeError("pick", a.value.shape, idx.shape)
    rows = np.arange(a.value.shape[0])

    def bw(g):
        full = np.zeros(a.value.shape)
        full[rows, idx] = g
        _acc(a, full)

    return make_node(a.value[rows, idx], (a,), bw, "pick")


def einsum(spec, *operands):
    """Multi-operand einsum without repeated indices inside one operand."""
    tape = _tape_of(*operands)
    nodes = [_as_node(o, tape) for o in operands]
    ins, out = spec.replace(" ", "").split("->")
    ins = ins.split(",")
    if len(ins) != len(nodes):
        raise ShapeError("einsum", *(n.value.shape for n in nodes), detail=spec)
    try:
        value = np.einsum(spec, *(n.value for n in nodes), optimize=True)
    except ValueError as exc:
        raise ShapeError("einsum", *(n.value.shape for n in nodes), detail=f"{spec}: {exc}") from None

    def bw(g):
        for k, n in enumerate(nodes):
            if not n.requires_grad:
                continue
            others = [nodes[j].value for j in range(len(nodes)) if j != k]
            sub_spec = ",".join([out] + [ins[j] for j in range(len(nodes)) if j != k]) + "->" + ins[k]
            _acc(n, np.einsum(sub_spec, g, *others, optimize=True))

    return make_node(np.asarray(value), tuple(nodes), bw, "einsum")


def detach(a):
    return Node(a.value.copy(), a.tape)


def grad_check(f, params, step=1e-5):
    """Largest relative gap between analytic and central-difference gradients.

    ``f`` is called with no arguments and must build a scalar node from
    ``params`` on their tape.  The error at each coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    params = list(params)
    tape = params[0].tape
    for p in params:
        p.zero_grad()
    root = f()
    if not np.all(np.isfinite(root.value)):
        raise FloatingPointError("grad_check: f is not finite at the base point")
    tape.backward(root)
    analytic = [p.grad.copy() for p in params]
    tape.reset()

    def value():
        out = f()
        tape.reset()
        v = float(out.value)
        if not np.isfinite(v):
            raise FloatingPointError("grad_check: f is not finite near the base point")
        return v

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.value.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = value()
            flat[i] = orig - step
            down = value()
            flat[i] = orig
            num = (up - down) / (2.0 * step)
            worst = max(worst, abs(gflat[i] - num) / max(1.0, abs(num)))
    return worst
