"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` is a node in a define-by-run computation graph; executing a
``Tape`` against a ``ParamSet`` records the graph in topological order and
retains intermediate values so ``backward`` can accumulate vector-Jacobian
products back to the trainable leaves. Everything is 64-bit and
single-threaded; determinism is part of the contract.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ParamSet",
    "forward",
    "backward",
    "check_gradients",
    "GradCheckReport",
    "NonFiniteError",
]


class NonFiniteError(FloatingPointError):
    """A forward evaluation produced NaN or Inf."""


def _as_value(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """One node of the graph: a float64 array plus how it was produced."""

    __slots__ = ("value", "requires_grad", "grad", "op", "_parents", "_vjps")

    # make numpy defer mixed ndarray/Tensor arithmetic to our reflected ops
    __array_ufunc__ = None

    def __init__(self, value, requires_grad=False, op="leaf", parents=(), vjps=()):
        self.value = _as_value(value)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = op
        self._parents = parents
        self._vjps = vjps

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.value.shape})"

    # --- graph construction -------------------------------------------------

    @staticmethod
    def _node(op, value, pairs):
        """Build a result node from (parent, vjp) pairs; prunes dead branches."""
        live = [(p, v) for p, v in pairs if p.requires_grad]
        if not live:
            return Tensor(value, op=op)
        parents, vjps = zip(*live)
        return Tensor(value, requires_grad=True, op=op, parents=parents, vjps=vjps)

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Tensor) else Tensor(x)

    # --- elementwise arithmetic ----------------------------------------------

    def __add__(self, other):
        a, b = self, Tensor._lift(other)
        out = a.value + b.value
        return Tensor._node("add", out, [
            (a, lambda g, s=a.value.shape: _unbroadcast(g, s)),
            (b, lambda g, s=b.value.shape: _unbroadcast(g, s)),
        ])

    __radd__ = __add__

    def __neg__(self):
        return Tensor._node("neg", -self.value, [(self, lambda g: -g)])

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        a, b = self, Tensor._lift(other)
        out = a.value * b.value
        return Tensor._node("mul", out, [
            (a, lambda g, bv=b.value, s=a.value.shape: _unbroadcast(g * bv, s)),
            (b, lambda g, av=a.value, s=b.value.shape: _unbroadcast(g * av, s)),
        ])

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, Tensor._lift(other)
        out = a.value / b.value
        return Tensor._node("div", out, [
            (a, lambda g, bv=b.value, s=a.value.shape: _unbroadcast(g / bv, s)),
            (b, lambda g, av=a.value, bv=b.value, s=b.value.shape:
                _unbroadcast(-g * av / (bv * bv), s)),
        ])

    def __rtruediv__(self, other):
        return Tensor._lift(other) / self

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise TypeError("only constant exponents are supported")
        out = self.value ** p
        return Tensor._node("power", out, [
            (self, lambda g, x=self.value: g * p * x ** (p - 1)),
        ])

    def reciprocal(self):
        out = 1.0 / self.value
        return Tensor._node("reciprocal", out, [
            (self, lambda g, o=out: -g * o * o),
        ])

    # --- matmul ---------------------------------------------------------------

    def __matmul__(self, other):
        a, b = self, Tensor._lift(other)
        av, bv = a.value, b.value
        out = av @ bv
        if av.ndim == 2 and bv.ndim == 2:
            return Tensor._node("matmul", out, [
                (a, lambda g, bv=bv: g @ bv.T),
                (b, lambda g, av=av: av.T @ g),
            ])
        if av.ndim == 3 and bv.ndim == 2:
            return Tensor._node("matmul", out, [
                (a, lambda g, bv=bv: g @ bv.T),
                (b, lambda g, av=av: np.tensordot(av, g, axes=([0, 1], [0, 1]))),
            ])
        raise ValueError(f"unsupported matmul ranks: {av.ndim} @ {bv.ndim}")

    def __rmatmul__(self, other):
        return Tensor._lift(other) @ self

    # --- elementwise nonlinearities --------------------------------------------

    def exp(self):
        out = np.exp(self.value)
        return Tensor._node("exp", out, [(self, lambda g, o=out: g * o)])

    def log(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(self.value)
        return Tensor._node("log", out, [(self, lambda g, x=self.value: g / x)])

    def sqrt(self):
        out = np.sqrt(self.value)
        return Tensor._node("sqrt", out, [(self, lambda g, o=out: g / (2.0 * o))])

    def abs(self):
        out = np.abs(self.value)
        return Tensor._node("abs", out, [
            (self, lambda g, x=self.value: g * np.sign(x)),
        ])

    def relu(self):
        out = np.maximum(self.value, 0.0)
        return Tensor._node("relu", out, [
            (self, lambda g, x=self.value: g * (x > 0)),
        ])

    def leaky_relu(self, alpha=0.2):
        x = self.value
        out = np.where(x > 0, x, alpha * x)
        return Tensor._node("leaky_relu", out, [
            (self, lambda g, x=x: g * np.where(x > 0, 1.0, alpha)),
        ])

    def softplus(self):
        x = self.value
        t = np.exp(-np.abs(x))
        out = np.maximum(x, 0.0) + np.log1p(t)
        # derivative sigmoid(x), reusing the forward's exp
        return Tensor._node("softplus", out, [
            (self, lambda g, x=x, t=t: g * np.where(x >= 0, 1.0 / (1.0 + t),
                                                    t / (1.0 + t))),
        ])

    def sigmoid(self):
        out = _sigmoid_np(self.value)
        return Tensor._node("sigmoid", out, [
            (self, lambda g, o=out: g * o * (1.0 - o)),
        ])

    def sin(self):
        return Tensor._node("sin", np.sin(self.value), [
            (self, lambda g, x=self.value: g * np.cos(x)),
        ])

    def cos(self):
        return Tensor._node("cos", np.cos(self.value), [
            (self, lambda g, x=self.value: -g * np.sin(x)),
        ])

    def clip(self, lo, hi):
        x = self.value
        out = np.clip(x, lo, hi)
        return Tensor._node("clip", out, [
            (self, lambda g, x=x: g * ((x >= lo) & (x <= hi))),
        ])

    # --- reductions -------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = self.value.sum(axis=axis, keepdims=keepdims)

        def vjp(g, shape=self.value.shape):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                axes = tuple(a % len(shape) for a in axes)
                g = np.expand_dims(g, axes)
            return np.broadcast_to(g, shape).copy()

        return Tensor._node("sum", out, [(self, vjp)])

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else (
            np.prod([self.value.shape[a] for a in
                     (axis if isinstance(axis, tuple) else (axis,))]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def max(self, axis=None, keepdims=False):
        out = self.value.max(axis=axis, keepdims=keepdims)

        def vjp(g, x=self.value):
            ref = x.max(axis=axis, keepdims=True)
            mask = (x == ref).astype(np.float64)
            mask /= mask.sum(axis=axis, keepdims=True)
            g = np.asarray(g)
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                axes = tuple(a % x.ndim for a in axes)
                g = np.expand_dims(g, axes)
            return mask * g

        return Tensor._node("max", out, [(self, vjp)])

    def cumsum(self, axis):
        out = np.cumsum(self.value, axis=axis)

        def vjp(g):
            return np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)

        return Tensor._node("cumsum", out, [(self, vjp)])

    # --- shape ops ---------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = self.value.reshape(shape)
        return Tensor._node("reshape", out, [
            (self, lambda g, s=self.value.shape: g.reshape(s)),
        ])

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.value.ndim)))
        inv = np.argsort(axes)
        out = self.value.transpose(axes)
        return Tensor._node("transpose", out, [
            (self, lambda g, inv=tuple(inv): g.transpose(inv)),
        ])

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        out = self.value[idx]

        def vjp(g, shape=self.value.shape, idx=idx):
            full = np.zeros(shape, dtype=np.float64)
            full[idx] = g
            return full

        return Tensor._node("slice", out, [(self, vjp)])

    def broadcast_to(self, shape):
        out = np.broadcast_to(self.value, shape)
        return Tensor._node("broadcast", np.ascontiguousarray(out), [
            (self, lambda g, s=self.value.shape: _unbroadcast(g, s)),
        ])


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def _softplus_np(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def concat(tensors, axis=0):
    """Concatenate tensors (or arrays) along an axis."""
    tensors = [Tensor._lift(t) for t in tensors]
    values = [t.value for t in tensors]
    out = np.concatenate(values, axis=axis)
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    pairs = []
    for i, t in enumerate(tensors):
        def vjp(g, lo=offsets[i], hi=offsets[i + 1]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]
        pairs.append((t, vjp))
    return Tensor._node("concat", out, pairs)


# --- convolution primitives -------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """(B,C,H,W) -> (B, Ho*Wo, C*kh*kw) patch matrix."""
    b, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    hp, wp = x.shape[2], x.shape[3]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (b, c, ho, wo, kh, kw),
        (s0, s1, s2 * stride, s3 * stride, s2, s3), writeable=False)
    cols = np.ascontiguousarray(view.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(b, ho * wo, c * kh * kw), ho, wo


def _col2im(cols: np.ndarray, x_shape, kh, kw, stride, pad, ho, wo):
    """Scatter-add (B, Ho*Wo, C*kh*kw) back to the input layout."""
    b, c, h, w = x_shape
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    cols = cols.reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[..., i, j]
    if pad:
        return xp[:, :, pad:-pad, pad:-pad]
    return xp


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride=1, pad=0):
    o, c, kh, kw = w.shape
    cols, ho, wo = _im2col(x, kh, kw, stride, pad)
    out = cols @ w.reshape(o, c * kh * kw).T
    return out.transpose(0, 2, 1).reshape(x.shape[0], o, ho, wo), cols, ho, wo


def conv2d(x, w, stride=1, pad=0):
    """2-D convolution, NCHW input and OIHW filters; no dilation."""
    xt, wt = Tensor._lift(x), Tensor._lift(w)
    out, cols, ho, wo = conv2d_forward(xt.value, wt.value, stride, pad)
    o, c, kh, kw = wt.value.shape

    def vjp_x(g, cols=cols):
        gmat = g.reshape(g.shape[0], o, ho * wo).transpose(0, 2, 1)
        gcols = gmat @ wt.value.reshape(o, c * kh * kw)
        return _col2im(gcols, xt.value.shape, kh, kw, stride, pad, ho, wo)

    def vjp_w(g, cols=cols):
        gmat = g.reshape(g.shape[0], o, ho * wo).transpose(0, 2, 1)
        gw = np.tensordot(gmat, cols, axes=([0, 1], [0, 1]))
        return gw.reshape(o, c, kh, kw)

    return Tensor._node("conv2d", out, [(xt, vjp_x), (wt, vjp_w)])


def avg_pool2d(x, k):
    """Non-overlapping average pooling; spatial dims must divide by k."""
    xt = Tensor._lift(x)
    b, c, h, w = xt.value.shape
    if h % k or w % k:
        raise ValueError(f"pool size {k} must divide spatial dims {(h, w)}")
    v = xt.value.reshape(b, c, h // k, k, w // k, k)
    out = v.mean(axis=(3, 5))

    def vjp(g):
        g = g / (k * k)
        g = np.repeat(np.repeat(g, k, axis=2), k, axis=3)
        return g

    return Tensor._node("avg_pool2d", out, [(xt, vjp)])


# --- tape -----------------------------------------------------------------------


def _topo_order(out: Tensor):
    order, seen, stack = [], set(), [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


class Tape:
    """A replayable computation: a builder function over named leaf tensors.

    ``forward`` evaluates the builder against a ``ParamSet``, retaining the
    node list in topological order; ``backward`` then propagates a seed
    gradient to every trainable leaf.
    """

    def __init__(self, build, check_finite=True):
        self.build = build
        self.check_finite = check_finite
        self._output = None
        self._leaves = None
        self._nodes = None

    @property
    def nodes(self):
        return self._nodes

    @property
    def output(self):
        return self._output

    def forward(self, params: "ParamSet") -> np.ndarray:
        leaves = {
            name: Tensor(params.value(name), requires_grad=params.trainable(name),
                         op=f"leaf:{name}")
            for name in params.names()
        }
        out = self.build(leaves)
        if not isinstance(out, Tensor):
            out = Tensor._lift(out)
        self._output = out
        self._leaves = leaves
        self._nodes = _topo_order(out)
        if self.check_finite and not np.all(np.isfinite(out.value)):
            culprit = self._first_nonfinite()
            raise NonFiniteError(
                f"non-finite forward value first produced by node {culprit!r}")
        return out.value

    def _first_nonfinite(self) -> str:
        for node in self._nodes:
            if not np.all(np.isfinite(node.value)):
                return node.op
        return self._output.op

    def backward(self, seed) -> dict:
        if self._output is None:
            raise RuntimeError("backward called before forward")
        seed = _as_value(seed)
        if seed.shape != self._output.value.shape:
            raise ValueError(
                f"seed shape {seed.shape} != output shape {self._output.value.shape}")
        for node in self._nodes:
            node.grad = None
        self._output.grad = seed
        for node in reversed(self._nodes):
            g = node.grad
            if g is None:
                continue
            for parent, vjp in zip(node._parents, node._vjps):
                pg = vjp(g)
                parent.grad = pg if parent.grad is None else parent.grad + pg
            if node._parents:
                node.grad = None if node is not self._output else g
        grads = {}
        for name, leaf in self._leaves.items():
            if leaf.requires_grad:
                grads[name] = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        return grads


def forward(tape: Tape, params: "ParamSet") -> np.ndarray:
    return tape.forward(params)


def backward(tape: Tape, seed) -> dict:
    return tape.backward(seed)


# --- parameters -----------------------------------------------------------------


@dataclass
class _Param:
    value: np.ndarray
    trainable: bool


class ParamSet:
    """Named float64 arrays with trainable flags and an update version counter."""

    def __init__(self):
        self._params: dict[str, _Param] = {}
        self.version = 0

    def add(self, name: str, value, trainable=True) -> None:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already present")
        self._params[name] = _Param(_as_value(value).copy(), bool(trainable))

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def trainable_names(self):
        return [n for n, p in self._params.items() if p.trainable]

    def value(self, name: str) -> np.ndarray:
        return self._params[name].value

    def trainable(self, name: str) -> bool:
        return self._params[name].trainable

    def set_value(self, name: str, value) -> None:
        p = self._params[name]
        v = _as_value(value)
        if v.shape != p.value.shape:
            raise ValueError(f"shape mismatch for {name!r}: {v.shape} != {p.value.shape}")
        p.value = v.copy()
        self.version += 1

    def set_trainable(self, name: str, flag: bool) -> None:
        self._params[name].trainable = bool(flag)

    def freeze(self, prefix: str) -> None:
        for n in self._params:
            if n.startswith(prefix):
                self._params[n].trainable = False

    def fingerprint(self, prefix: str = "") -> str:
        """sha256 over name, shape and raw bytes of matching parameters."""
        h = hashlib.sha256()
        for n in sorted(self._params):
            if not n.startswith(prefix):
                continue
            p = self._params[n]
            h.update(n.encode())
            h.update(str(p.value.shape).encode())
            h.update(np.ascontiguousarray(p.value).tobytes())
        return h.hexdigest()

    def subset(self, prefix: str) -> "ParamSet":
        out = ParamSet()
        for n, p in self._params.items():
            if n.startswith(prefix):
                out.add(n, p.value, p.trainable)
        return out

    def copy(self) -> "ParamSet":
        return self.subset("")


# --- gradient checking ------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str
    passed: bool
    per_param: dict = field(default_factory=dict)


def check_gradients(tape: Tape, params: ParamSet, eps=1e-5, tol=1e-6) -> GradCheckReport:
    """Compare analytic gradients against central differences, per element.

    The relative error for each element is |a - n| / max(1e-8, |a| + |n|);
    the report passes when the worst element is within `tol`. Frozen
    parameters are excluded.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    out = tape.forward(params)
    if np.asarray(out).size != 1:
        raise ValueError("gradient check requires a scalar output")
    grads = tape.backward(np.ones_like(out))

    max_rel, worst = 0.0, ""
    per_param = {}
    for name in params.trainable_names():
        base = params.value(name).copy()
        analytic = grads[name]
        numeric = np.zeros_like(base)
        flat = base.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            params.set_value(name, base)
            fp = float(tape.forward(params))
            flat[i] = orig - eps
            params.set_value(name, base)
            fm = float(tape.forward(params))
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * eps)
        params.set_value(name, base)
        denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
        rel = float(np.max(np.abs(analytic - numeric) / denom)) if base.size else 0.0
        per_param[name] = rel
        if rel >= max_rel:
            max_rel, worst = rel, name
    tape.forward(params)
    return GradCheckReport(max_rel, worst, max_rel <= tol, per_param)
