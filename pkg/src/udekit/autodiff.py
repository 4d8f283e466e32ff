"""Define-by-run reverse-mode automatic differentiation over float64 arrays.

A :class:`Tape` records every primitive evaluated while it is active::

    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with Tape() as tape:
        loss = tanh(x @ w).sum()
    (gw,) = tape.gradient(loss, [w])

Outside any tape, operations run eagerly without recording, which is the
evaluation mode used for Monte Carlo simulation.  Leaves (tensors created with
``requires_grad=True``) persist across tapes; each tape assigns them a node id
the first time they are used.
"""
import threading
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DomainError, GradCheckFailure, ParameterError, ShapeError

__all__ = [
    "Tensor", "Tape", "no_grad", "current_tape", "as_tensor",
    "add", "sub", "mul", "div", "matmul", "neg", "scale", "sum", "mean",
    "tanh", "softplus", "sigmoid", "exp", "log", "sin", "cos", "square",
    "concat", "stack", "reshape", "transpose", "broadcast_to", "take",
    "backward", "grad_check", "grad_check_tensors",
]

_local = threading.local()


def _stack():
    s = getattr(_local, "stack", None)
    if s is None:
        s = _local.stack = []
    return s


def current_tape():
    s = _stack()
    return s[-1] if s else None


@contextmanager
def no_grad():
    """Suspend recording inside an active tape."""
    s = _stack()
    s.append(None)
    try:
        yield
    finally:
        s.pop()


class Tape:
    """Ordered record of primitive operations and their vector-Jacobian rules."""

    def __init__(self):
        self._out = []
        self._inputs = []
        self._vjps = []
        self._ops = []
        self._n = 0
        self._leaf_ids = {}
        self._leaves = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        s = _stack()
        if s and s[-1] is self:
            s.pop()
        else:  # pragma: no cover - misuse
            s.remove(self)
        return False

    def __len__(self):
        return len(self._out)

    @property
    def ops(self):
        return list(self._ops)

    def _leaf(self, t):
        nid = self._leaf_ids.get(id(t))
        if nid is None:
            nid = self._n
            self._n += 1
            self._leaf_ids[id(t)] = nid
            self._leaves.append(t)
        return nid

    def _push(self, inputs, vjp, op):
        nid = self._n
        self._n += 1
        self._out.append(nid)
        self._inputs.append(inputs)
        self._vjps.append(vjp)
        self._ops.append(op)
        return nid

    def node_id(self, t):
        """Node id of ``t`` on this tape, or ``None`` if it was never recorded."""
        if t._tape is self:
            return t._nid
        if t.requires_grad:
            return self._leaf_ids.get(id(t))
        return None

    def backward(self, output):
        """Gradients of scalar ``output`` for every leaf on the tape.

        Returns ``{node_id: ndarray}``; leaves the output does not depend on get
        zero arrays.
        """
        if not isinstance(output, Tensor) or output.values.size != 1:
            shape = getattr(output, "shape", None)
            raise ContractError(f"backward needs a scalar output, got shape {shape}")
        grads = {}
        out_id = self.node_id(output)
        if out_id is not None:
            grads[out_id] = np.ones_like(output.values)
            outs, ins, vjps = self._out, self._inputs, self._vjps
            for k in range(len(outs) - 1, -1, -1):
                g = grads.pop(outs[k], None)
                if g is None:
                    continue
                for nid, gi in zip(ins[k], vjps[k](g)):
                    if nid is None or gi is None:
                        continue
                    prev = grads.get(nid)
                    grads[nid] = gi if prev is None else prev + gi
        result = {}
        for t in self._leaves:
            nid = self._leaf_ids[id(t)]
            g = grads.get(nid)
            result[nid] = np.zeros_like(t.values) if g is None else np.array(g, dtype=np.float64)
        return result

    def gradient(self, output, wrt):
        """Gradients of ``output`` with respect to each tensor in ``wrt``."""
        grads = self.backward(output)
        res = []
        for t in wrt:
            nid = self.node_id(t)
            res.append(np.zeros_like(t.values) if nid is None else grads[nid])
        return res


def backward(tape, output):
    return tape.backward(output)


class Tensor:
    """Dense float64 array that may participate in a :class:`Tape`."""

    __slots__ = ("values", "requires_grad", "_tape", "_nid")
    __array_priority__ = 1000

    def __init__(self, values, requires_grad=False):
        if requires_grad:
            self.values = np.array(values, dtype=np.float64, order="C", copy=True)
        else:
            self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._tape = None
        self._nid = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.values.reshape(-1)[0])

    def numpy(self):
        return self.values

    def detach(self):
        return Tensor(self.values)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.values!r}{flag})"

    def __len__(self):
        return len(self.values)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __matmul__ = lambda self, o: matmul(self, o)
    __rmatmul__ = lambda self, o: matmul(o, self)
    __neg__ = lambda self: neg(self)
    __getitem__ = lambda self, idx: take(self, idx)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(op, values, parents, vjp):
    out = Tensor.__new__(Tensor)
    out.values = values
    out.requires_grad = False
    out._tape = None
    out._nid = None
    s = getattr(_local, "stack", None)
    if not s:
        return out
    tape = s[-1]
    if tape is None:
        return out
    ids = []
    tracked = False
    for p in parents:
        if p._tape is tape:
            ids.append(p._nid)
            tracked = True
        elif p.requires_grad:
            ids.append(tape._leaf(p))
            tracked = True
        else:
            ids.append(None)
    if tracked:
        out._tape = tape
        out._nid = tape._push(tuple(ids), vjp, op)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary_shape(op, a, b):
    if a.shape == b.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise binary

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _result("add", a.values + b.values, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape("subtract", a, b)
    sa, sb = a.shape, b.shape
    return _result("subtract", a.values - b.values, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape("multiply", a, b)
    av, bv = a.values, b.values
    return _result("multiply", av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape("divide", a, b)
    av, bv = a.values, b.values
    out = av / bv

    def vjp(g):
        gb = g / bv
        return _unbroadcast(gb, av.shape), _unbroadcast(-gb * out, bv.shape)
    return _result("divide", out, (a, b), vjp)


def matmul(a, b):
    """Matrix product ``a @ b`` with ``a`` of any rank and ``b`` 1-D or 2-D."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.values, b.values
    if av.ndim == 0 or bv.ndim == 0 or bv.ndim > 2 or av.shape[-1] != bv.shape[0]:
        raise ShapeError("matmul", av.shape, bv.shape)
    out = av @ bv
    k = bv.shape[0]
    if bv.ndim == 2:
        def vjp(g):
            ga = g @ bv.T
            if av.ndim == 1:
                gb = np.outer(av, g)
            else:
                gb = av.reshape(-1, k).T @ g.reshape(-1, bv.shape[1])
            return ga, gb
    else:
        def vjp(g):
            ga = np.multiply.outer(g, bv)
            gb = av.reshape(-1, k).T @ np.reshape(g, -1)
            return ga, gb
    return _result("matmul", out, (a, b), vjp)


# ---------------------------------------------------------------------------
# elementwise unary

def neg(a):
    a = as_tensor(a)
    return _result("negate", -a.values, (a,), lambda g: (-g,))


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _result("scale", a.values * c, (a,), lambda g: (g * c,))


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.values)
    return _result("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(a):
    a = as_tensor(a)
    x = a.values
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _result("softplus", y, (a,), lambda g: (g * _sigmoid(x),))


def sigmoid(a):
    a = as_tensor(a)
    y = _sigmoid(a.values)
    return _result("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.values)
    return _result("exp", y, (a,), lambda g: (g * y,))


def log(a):
    a = as_tensor(a)
    x = a.values
    if np.any(~(x > 0)):
        raise DomainError(f"log: non-positive input (min {np.min(x)!r})")
    return _result("log", np.log(x), (a,), lambda g: (g / x,))


def sin(a):
    a = as_tensor(a)
    x = a.values
    return _result("sin", np.sin(x), (a,), lambda g: (g * np.cos(x),))


def cos(a):
    a = as_tensor(a)
    x = a.values
    return _result("cos", np.cos(x), (a,), lambda g: (-g * np.sin(x),))


def square(a):
    a = as_tensor(a)
    x = a.values
    return _result("square", x * x, (a,), lambda g: (2.0 * g * x,))


# ---------------------------------------------------------------------------
# reductions and structure

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    axes = (axis,) if np.isscalar(axis) else tuple(axis)
    return tuple(ax % ndim for ax in axes)


def sum(a, axis=None):
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axis(axis, a.ndim)
    y = np.sum(a.values, axis=axes)

    def vjp(g):
        if axes is not None:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)
    return _result("sum", np.asarray(y, dtype=np.float64), (a,), vjp)


def mean(a, axis=None):
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = a.size if axes is None else int(np.prod([a.shape[i] for i in axes]))
    return scale(sum(a, axes), 1.0 / count)


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concatenate")
    ndim = ts[0].ndim
    ax = axis % ndim if ndim else 0
    for t in ts[1:]:
        if t.ndim != ndim or any(t.shape[i] != ts[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError("concatenate", ts[0].shape, t.shape)
    out = np.concatenate([t.values for t in ts], axis=ax)
    cuts = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _result("concatenate", out, tuple(ts), lambda g: tuple(np.split(g, cuts, axis=ax)))


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeError("stack", ts[0].shape, t.shape)
    out = np.stack([t.values for t in ts], axis=axis)
    ax = axis % out.ndim
    n = len(ts)
    return _result("stack", out, tuple(ts),
                   lambda g: tuple(np.take(g, i, axis=ax) for i in range(n)))


def reshape(a, shape):
    a = as_tensor(a)
    orig = a.shape
    try:
        y = a.values.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", orig, tuple(np.atleast_1d(shape))) from None
    return _result("reshape", y, (a,), lambda g: (g.reshape(orig),))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _result("transpose", np.transpose(a.values, axes), (a,),
                   lambda g: (np.transpose(g, inv),))


def broadcast_to(a, shape):
    a = as_tensor(a)
    orig = a.shape
    try:
        y = np.broadcast_to(a.values, shape)
    except ValueError:
        raise ShapeError("broadcast_to", orig, tuple(shape)) from None
    return _result("broadcast_to", y, (a,), lambda g: (_unbroadcast(g, orig),))


def _is_basic(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def take(a, idx):
    """Indexing ``a[idx]`` (basic slicing or integer-array indexing)."""
    a = as_tensor(a)
    shape = a.shape
    y = a.values[idx]
    basic = _is_basic(idx)

    def vjp(g):
        z = np.zeros(shape)
        if basic:
            z[idx] += g
        else:
            np.add.at(z, idx, g)
        return (z,)
    return _result("index", np.array(y, dtype=np.float64), (a,), vjp)


# ---------------------------------------------------------------------------
# finite-difference validation

def _scalar_value(out):
    v = out.values if isinstance(out, Tensor) else np.asarray(out, dtype=np.float64)
    if v.size != 1:
        raise ContractError(f"grad_check needs a scalar function, got shape {v.shape}")
    return float(v.reshape(-1)[0])


def grad_check_tensors(fn, tensors, step=1e-5, details=False):
    """Compare reverse-mode gradients of ``fn()`` with central differences.

    ``fn`` takes no arguments and reads the leaf tensors in ``tensors``, which
    are perturbed in place and restored.  Returns the maximum over coordinates
    of ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``; with
    ``details=True`` also a list of per-tensor error arrays.
    """
    if not step > 0:
        raise ParameterError(f"grad_check step must be positive, got {step}")
    with Tape() as tape:
        out = fn()
    analytic = tape.gradient(out, tensors)
    worst = 0.0
    per_tensor = []
    for ti, (t, ga) in enumerate(zip(tensors, analytic)):
        flat = t.values.reshape(-1)
        if not np.shares_memory(flat, t.values):
            raise ContractError("grad_check requires contiguous leaf tensors")
        gflat = ga.reshape(-1)
        errs = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = _scalar_value(fn())
            flat[i] = orig - step
            fm = _scalar_value(fn())
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise GradCheckFailure("non-finite function value while probing", (ti, i))
            num = (fp - fm) / (2.0 * step)
            errs[i] = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), 1e-8)
        if errs.size:
            worst = max(worst, float(errs.max()))
        per_tensor.append(errs.reshape(t.shape))
    if details:
        return worst, per_tensor
    return worst


def grad_check(f, x, step=1e-5):
    """Gradient check of the scalar function ``f(Tensor) -> Tensor`` at ``x``."""
    leaf = Tensor(x, requires_grad=True)
    return grad_check_tensors(lambda: f(leaf), [leaf], step)
