"""Tape-free reverse-mode differentiation over the tensor kernels.

Each differentiable op returns a :class:`Var` that remembers its parents and a
closure mapping the output gradient to one gradient per parent. :func:`backward`
walks the graph in reverse topological order and deposits parameter gradients
into a :class:`ParamSet`.
"""
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, field
import threading

import numpy as np

from . import backend
from . import tensor as T
from .errors import NumericalError, ShapeError

_local = threading.local()


def grad_enabled():
    return getattr(_local, "grad", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _local.grad = False
    try:
        yield
    finally:
        _local.grad = prev


@contextmanager
def relu_trace():
    """Collect every ReLU input evaluated inside the block (used by grad_check)."""
    prev = getattr(_local, "trace", None)
    _local.trace = trace = []
    try:
        yield trace
    finally:
        _local.trace = prev


class Var:
    __slots__ = ("value", "requires_grad", "parents", "backward_fn", "param")

    def __init__(self, value, requires_grad=False, param=None):
        self.value = value
        self.requires_grad = requires_grad
        self.parents = ()
        self.backward_fn = None
        self.param = param

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f", param={self.param!r}" if self.param else ""
        return f"Var(shape={self.value.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def item(self):
        return float(self.value)


def lift(x):
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x, dtype=backend.working_dtype()))


def _node(value, parents, backward_fn):
    out = Var(value)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
    return out


class ParamSet:
    """Named parameter tensors with same-shaped gradient accumulators.

    Iteration is lexicographic by name. Names ending in ``.bias`` are biases;
    everything else counts as a weight for the L2 penalty.
    """

    def __init__(self, tensors=None, dtype=np.float64):
        self.dtype = dtype
        self._values = {}
        self.grads = {}
        for name, value in (tensors or {}).items():
            self.add(name, value)

    def add(self, name, value):
        if name in self._values:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=self.dtype)
        self._values[name] = value
        self.grads[name] = np.zeros_like(value)
        self._values = dict(sorted(self._values.items()))
        self.grads = {k: self.grads[k] for k in self._values}

    def __getitem__(self, name):
        return self._values[name]

    def __contains__(self, name):
        return name in self._values

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def names(self):
        return list(self._values)

    def items(self):
        return self._values.items()

    def var(self, name):
        return Var(self._values[name], requires_grad=True, param=name)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def num_scalars(self):
        return sum(v.size for v in self._values.values())

    @staticmethod
    def is_weight(name):
        return not name.endswith(".bias")

    def copy(self):
        return ParamSet({k: v.copy() for k, v in self._values.items()}, self.dtype)

    def assign(self, other):
        """Copy values from ``other`` (same names and shapes) in place."""
        for name, v in other.items():
            self._values[name][...] = v


def backward(loss, params=None):
    """Accumulate d(loss)/d(param) into ``params.grads``.

    Returns the dict of gradients for every parameter leaf that was reached.
    """
    if not isinstance(loss, Var) or loss.value.size != 1 or loss.value.ndim > 1:
        raise ShapeError("backward needs a scalar loss", dim="loss",
                         actual=getattr(getattr(loss, "value", None), "shape", None))
    if not np.isfinite(loss.value).all():
        raise NumericalError(f"loss is not finite: {float(loss.value)}")
    order = _topo(loss)
    grads = {id(loss): np.ones_like(loss.value)}
    leaf_grads = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.param is not None:
            acc = leaf_grads.get(node.param)
            leaf_grads[node.param] = g if acc is None else acc + g
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for name, g in leaf_grads.items():
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
        if params is not None and name in params:
            params.grads[name] += g
    return leaf_grads


def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = lift(a), lift(b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = lift(a), lift(b)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = lift(a), lift(b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape),
                            _unbroadcast(g * a.value, b.shape)))


def square(x):
    x = lift(x)
    return _node(x.value * x.value, (x,), lambda g: (2.0 * x.value * g,))


def absolute(x):
    """|x| with subgradient 0 at x == 0."""
    x = lift(x)
    return _node(np.abs(x.value), (x,), lambda g: (np.sign(x.value) * g,))


def sum_all(x):
    x = lift(x)
    return _node(np.asarray(x.value.sum()), (x,),
                 lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x):
    x = lift(x)
    n = x.value.size
    return _node(np.asarray(x.value.sum() / n), (x,),
                 lambda g: (np.full(x.shape, float(g) / n),))


def reshape(x, shape):
    x = lift(x)
    return _node(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def sigmoid(x):
    x = lift(x)
    s = T.sigmoid(x.value)
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),))


def relu(x):
    """max(x, 0); the gradient at exactly 0 is 0."""
    x = lift(x)
    trace = getattr(_local, "trace", None)
    if trace is not None:
        trace.append(x.value.copy())  # the input may alias a parameter grad_check perturbs
    return _node(T.relu(x.value), (x,), lambda g: (g * (x.value > 0.0),))


# ---------------------------------------------------------------- structural

def concat(parts, axis=0):
    parts = [lift(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), bw)


def concat_channels(a, b):
    a, b = lift(a), lift(b)
    T.concat_channels(a.value[:1], b.value[:1])  # shape validation only
    return concat([a, b], axis=0)


def take(x, indices, axis=0):
    x = lift(x)
    indices = np.asarray(indices, dtype=np.intp)

    def bw(g):
        out = np.zeros_like(x.value)
        np.add.at(np.moveaxis(out, axis, 0), indices, np.moveaxis(g, axis, 0))
        return (out,)

    return _node(np.take(x.value, indices, axis=axis), (x,), bw)


def embedding(table, index):
    """Row ``index`` of ``table``; the gradient touches only that row."""
    table = lift(table)

    def bw(g):
        out = np.zeros_like(table.value)
        out[index] = g
        return (out,)

    return _node(table.value[index].copy(), (table,), bw)


def pad2d(x, top, bottom, left, right):
    x = lift(x)
    _, h, w = x.shape

    def bw(g):
        return (g[:, top:top + h, left:left + w],)

    return _node(np.pad(x.value, ((0, 0), (top, bottom), (left, right))), (x,), bw)


def subsample(x, step):
    x = lift(x)

    def bw(g):
        out = np.zeros_like(x.value)
        out[:, ::step, ::step] = g
        return (out,)

    return _node(np.ascontiguousarray(x.value[:, ::step, ::step]), (x,), bw)


def pixel_shuffle(x, r):
    x = lift(x)
    return _node(T.pixel_shuffle(x.value, r), (x,), lambda g: (T.pixel_unshuffle(g, r),))


def global_avg_pool(x):
    x = lift(x)
    _, h, w = x.shape
    return _node(T.global_avg_pool(x.value), (x,),
                 lambda g: (np.broadcast_to((g / (h * w))[:, None, None], x.shape).copy(),))


def resize_to(x, ho, wo):
    x = lift(x)
    _, h, w = x.shape
    out = T.resize_to(x.value, ho, wo)

    def bw(g):
        if wo != w:
            idx, wts = T.resample_table(w, wo)
            g = backend.resample_axis_T(g, idx, wts, w, 2)
        if ho != h:
            idx, wts = T.resample_table(h, ho)
            g = backend.resample_axis_T(g, idx, wts, h, 1)
        return (g,)

    return _node(out, (x,), bw)


def bicubic_resize(x, scale):
    x = lift(x)
    _, h, w = x.shape
    return resize_to(x, T.scaled_size(h, scale, "H"), T.scaled_size(w, scale, "W"))


# ---------------------------------------------------------------- layers

def conv2d(x, w, b, stride=1, padding=0):
    x, w, b = lift(x), lift(w), lift(b)
    T.ConvParams(w.value, b.value, stride, padding)  # validates kernel/bias shapes
    if x.value.ndim != 3 or x.shape[0] != w.shape[1]:
        raise ShapeError(f"input shape {x.shape} does not match conv C_in={w.shape[1]}",
                         dim="C_in", expected=w.shape[1], actual=x.shape[0])
    out, cols = T.conv2d_raw(x.value, w.value, b.value, stride, padding)
    c_out, c_in, k, _ = w.shape
    _, h, wd = x.shape
    ho, wo = out.shape[1:]

    def bw(g):
        g2 = g.reshape(c_out, ho * wo)
        gb = g2.sum(axis=1)
        w2 = w.value.reshape(c_out, -1)
        if cols is None:
            gw = g2 @ x.value.reshape(c_in, h * wd).T
            gx = (w2.T @ g2).reshape(x.shape)
        else:
            gw = g2 @ cols.T
            gcols = w2.T @ g2
            hp, wp = h + 2 * padding, wd + 2 * padding
            gxp = backend.col2im(gcols, c_in, hp, wp, k, stride, ho, wo)
            gx = gxp[:, padding:padding + h, padding:padding + wd]
        return gx, gw.reshape(w.shape), gb

    return _node(out, (x, w, b), bw)


def depthwise_conv2d(x, w, b, padding):
    x, w, b = lift(x), lift(w), lift(b)
    xv, wv, bv = T._check_depthwise(x.value, w.value, b.value, padding)
    xp = np.pad(xv, ((0, 0), (padding, padding), (padding, padding)))
    out = backend.depthwise_forward(xp, wv, bv)
    _, h, wd = xv.shape

    def bw(g):
        gxp, gw = backend.depthwise_backward(xp, wv, g)
        return gxp[:, padding:padding + h, padding:padding + wd], gw, g.sum(axis=(1, 2))

    return _node(out, (x, w, b), bw)


def linear(x, w, b):
    """``w @ x + b`` for a vector ``x``."""
    x, w, b = lift(x), lift(w), lift(b)
    if w.value.ndim != 2 or x.value.shape != (w.shape[1],):
        raise ShapeError(f"linear: input {x.shape} vs weight {w.shape}",
                         dim="in_features", expected=w.shape[1], actual=x.shape)
    return _node(w.value @ x.value + b.value, (x, w, b),
                 lambda g: (w.value.T @ g, np.outer(g, x.value), g))


# ---------------------------------------------------------------- gradient check

@dataclass
class GradCheckEntry:
    name: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    entries: list = field(default_factory=list)
    excluded: int = 0
    tol: float = 1e-6
    h: float = 1e-6
    precision: str = "float64"

    @property
    def max_rel_error(self):
        return max((e.rel_error for e in self.entries), default=0.0)

    @property
    def worst(self):
        return max(self.entries, key=lambda e: e.rel_error, default=None)

    @property
    def passed(self):
        return bool(self.entries) and all(e.rel_error <= self.tol for e in self.entries)

    def summary(self):
        w = self.worst
        where = f" worst={w.name}{list(w.index)}" if w else ""
        return (f"checked={len(self.entries)} excluded={self.excluded} "
                f"max_rel_error={self.max_rel_error:.3e} tol={self.tol:g} "
                f"fd_precision={self.precision}{where} "
                f"{'PASS' if self.passed else 'FAIL'}")


def _crosses_kink(base, plus, minus):
    for b, p, m in zip(base, plus, minus):
        if np.any((b == 0.0) & ((p != 0.0) | (m != 0.0))):
            return True
        if np.any(np.signbit(p) != np.signbit(m)) or np.any((p == 0.0) != (m == 0.0)):
            return True
    return False


def grad_check(model_forward, params, input, h=1e-6, tol=1e-6, samples=None, seed=0,
               precision="auto", names=None):
    """Compare analytic gradients against central differences.

    ``model_forward(params, input)`` must return a scalar :class:`Var` built from
    ``params.var(...)`` leaves. With ``samples`` set, that many coordinates are
    drawn without replacement under ``seed``; coordinates whose ``±h`` stencil
    touches or crosses a ReLU kink are skipped and replaced by further draws.
    ``names`` restricts the check to those parameters.

    Analytic gradients always come from the float64 forward/backward pass. The
    two finite-difference evaluations run in long double when ``precision`` is
    ``"extended"`` (or ``"auto"`` on platforms where long double is wider than
    float64). In float64 a single rounding of ``f`` already costs about
    ``eps * |f| / h`` in the difference quotient, which swamps small gradients.
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    if precision == "auto":
        precision = "extended" if backend.HAS_EXTENDED else "float64"
    if precision not in ("float64", "extended"):
        raise ValueError(f"precision must be auto, float64 or extended, got {precision!r}")
    params.zero_grad()
    with relu_trace() as base_trace:
        loss = model_forward(params, input)
    backward(loss, params)
    analytic = {k: g.copy() for k, g in params.grads.items()}
    params.zero_grad()

    if precision == "extended":
        fd_dtype = np.longdouble
        fd_params = ParamSet({k: v for k, v in params.items()}, dtype=fd_dtype)
        fd_input = (np.asarray(input, dtype=fd_dtype)
                    if isinstance(input, np.ndarray) and input.dtype.kind == "f" else input)
        mode = backend.extended_precision
    else:
        fd_dtype = np.float64
        fd_params, fd_input = params, input
        mode = nullcontext
    step = fd_dtype(h)

    names = params.names() if names is None else sorted(names)
    unknown = [n for n in names if n not in params]
    if unknown:
        raise KeyError(f"unknown parameters {unknown}")
    sizes = np.array([params[n].size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    rng = np.random.default_rng(seed)
    order = rng.permutation(total) if samples is not None else np.arange(total)
    want = total if samples is None else min(samples, total)

    report = GradCheckReport(tol=tol, h=h, precision=precision)
    for flat in order:
        if len(report.entries) >= want:
            break
        slot = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[slot]
        arr = fd_params[name]
        index = np.unravel_index(int(flat - offsets[slot]), arr.shape)
        orig = arr[index]
        try:
            with no_grad(), mode():
                arr[index] = orig + step
                with relu_trace() as plus_trace:
                    fp = model_forward(fd_params, fd_input).value
                arr[index] = orig - step
                with relu_trace() as minus_trace:
                    fm = model_forward(fd_params, fd_input).value
        finally:
            arr[index] = orig
        if _crosses_kink(base_trace, plus_trace, minus_trace):
            report.excluded += 1
            continue
        numeric = float((fd_dtype(fp) - fd_dtype(fm)) / (2 * step))
        a = float(analytic[name][index])
        rel = abs(a - numeric) / max(abs(a), 1e-8)
        report.entries.append(GradCheckEntry(name, tuple(int(i) for i in index), a, numeric, rel))
    return report
