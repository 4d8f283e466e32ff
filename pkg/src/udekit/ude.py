"""Drift and diffusion families, from mechanistic to fully neural.

Every family is a callable ``spec(x, u, t)`` over ``(d,)`` or ``(B, d)`` states
and exposes its learnable leaves through ``parameters()``.  Positive quantities
(OU rate, Wilson-Cowan time scale, constant diffusion) are stored as raw values
passed through softplus.
"""
import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ConfigError, ParameterError

DEFAULTS = {"a": 1.0, "m": 0.0, "tau": 1.0, "J": 0.0, "B": 0.0, "omega": 0.0, "K": 0.0, "b": 0.1}


def inv_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ParameterError("softplus-parameterised values must be positive")
    return y + np.log(-np.expm1(-y))


def glorot_bound(fan_in, fan_out):
    return np.sqrt(6.0 / (fan_in + fan_out))


def _array(value, shape, name):
    arr = np.broadcast_to(np.asarray(value, dtype=np.float64), shape)
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} must be finite")
    return np.array(arr)


class Component:
    """Named learnable leaves plus JSON round-tripping of config and values."""

    tag = None

    def __init__(self, seed=0):
        self.seed = int(seed)
        self._params = {}
        self._children = {}

    def _register(self, name, values):
        t = Tensor(values, requires_grad=True)
        self._params[name] = t
        return t

    def parameters(self):
        out = dict(self._params)
        for prefix, child in self._children.items():
            for name, t in child.parameters().items():
                out[f"{prefix}.{name}"] = t
        return out

    def config(self):
        raise NotImplementedError

    def to_dict(self):
        return {
            "type": self.tag,
            "config": self.config(),
            "seed": self.seed,
            "params": {name: {"shape": list(t.shape), "values": t.values.ravel().tolist()}
                       for name, t in self.parameters().items()},
        }

    def load_params(self, params):
        mine = self.parameters()
        if set(params) != set(mine):
            raise ParameterError(f"parameter names differ: {sorted(set(params) ^ set(mine))}")
        for name, t in mine.items():
            entry = params[name]
            arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
            if arr.shape != t.shape:
                raise ParameterError(f"{name}: expected shape {t.shape}, got {arr.shape}")
            t.values[...] = arr

    @classmethod
    def from_dict(cls, data):
        obj = cls(**data["config"], seed=data.get("seed", 0))
        obj.load_params(data["params"])
        return obj


class Mlp(Component):
    """Feed-forward network: tanh hidden layers, identity or softplus output."""

    tag = "mlp"

    def __init__(self, widths, output="identity", seed=0, last_scale=1.0):
        super().__init__(seed)
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ParameterError(f"invalid Mlp widths {widths}")
        if output not in ("identity", "softplus"):
            raise ParameterError(f"unknown output activation {output!r}")
        self.widths = widths
        self.output = output
        self.last_scale = float(last_scale)
        rng = np.random.default_rng(self.seed)
        self.weights, self.biases = [], []
        for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
            bound = glorot_bound(fi, fo)
            w = rng.uniform(-bound, bound, (fi, fo))
            if i == len(widths) - 2:
                w *= self.last_scale
            self.weights.append(self._register(f"W{i}", w))
            self.biases.append(self._register(f"b{i}", np.zeros(fo)))

    def config(self):
        return {"widths": self.widths, "output": self.output, "last_scale": self.last_scale}

    def __call__(self, x):
        h = as_tensor(x)
        if h.shape[-1] != self.widths[0]:
            raise ParameterError(f"Mlp expects {self.widths[0]} inputs, got {h.shape[-1]}")
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = ad.tanh(h)
        return ad.softplus(h) if self.output == "softplus" else h


def _features(x, u, t, input_dim, use_time):
    """Concatenate state, input and optionally time along the last axis."""
    parts = [x]
    if input_dim:
        if u is None:
            raise ParameterError(f"model expects an input of width {input_dim}")
        u = as_tensor(u)
        if u.shape[-1] != input_dim:
            raise ParameterError(f"expected input width {input_dim}, got {u.shape[-1]}")
        if u.shape[:-1] != x.shape[:-1]:
            u = ad.broadcast_to(u, x.shape[:-1] + (input_dim,))
        parts.append(u)
    if use_time:
        parts.append(Tensor(np.full(x.shape[:-1] + (1,), float(t))))
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)


class DriftSpec(Component):
    state_dim = 0
    input_dim = 0

    def check(self, x, u=None):
        x = as_tensor(x)
        if x.ndim not in (1, 2) or x.shape[-1] != self.state_dim:
            raise ParameterError(f"{self.tag} drift expects state width {self.state_dim}, got {x.shape}")
        if self.input_dim and (u is None or as_tensor(u).shape[-1] != self.input_dim):
            raise ParameterError(f"{self.tag} drift expects input width {self.input_dim}")
        return x


class OUDrift(DriftSpec):
    """``a (m - x)`` with rate ``a = softplus(a_raw)``."""

    tag = "ou"

    def __init__(self, dim=1, input_dim=0, a=DEFAULTS["a"], m=DEFAULTS["m"], seed=0):
        super().__init__(seed)
        self.state_dim, self.input_dim = int(dim), int(input_dim)
        self.a_raw = self._register("a_raw", inv_softplus(_array(a, (self.state_dim,), "a")))
        self.m_param = self._register("m", _array(m, (self.state_dim,), "m"))

    @property
    def a(self):
        return ad.softplus(self.a_raw).values.copy()

    @property
    def m(self):
        return self.m_param.values.copy()

    def config(self):
        return {"dim": self.state_dim, "input_dim": self.input_dim}

    def __call__(self, x, u=None, t=0.0):
        return (self.m_param - x) * ad.softplus(self.a_raw)


class WilsonCowanDrift(DriftSpec):
    """``(-x + J tanh(x) + B u) / tau`` with ``tau = softplus(tau_raw)``."""

    tag = "wilson-cowan"

    def __init__(self, dim=1, input_dim=0, tau=DEFAULTS["tau"], J=DEFAULTS["J"], B=DEFAULTS["B"], seed=0):
        super().__init__(seed)
        self.state_dim, self.input_dim = int(dim), int(input_dim)
        d, du = self.state_dim, self.input_dim
        self.tau_raw = self._register("tau_raw", inv_softplus(_array(tau, (), "tau")))
        self.J = self._register("J", _array(J, (d, d), "J"))
        self.B = self._register("B", _array(B, (d, du), "B")) if du else None

    @property
    def tau(self):
        return float(ad.softplus(self.tau_raw).values)

    def config(self):
        return {"dim": self.state_dim, "input_dim": self.input_dim}

    def __call__(self, x, u=None, t=0.0):
        x = as_tensor(x)
        rhs = ad.tanh(x) @ ad.transpose(self.J) - x
        if self.input_dim:
            rhs = rhs + as_tensor(u) @ ad.transpose(self.B)
        return rhs / ad.softplus(self.tau_raw)


def _kuramoto(x, omega, K, n):
    x = as_tensor(x)
    lead = x.shape[:-1]
    xj = ad.reshape(x, lead + (1, n))
    xi = ad.reshape(x, lead + (n, 1))
    coupling = ad.sum(ad.sin(xj - xi) * K, axis=-1)
    return omega + coupling * (1.0 / n)


class KuramotoDrift(DriftSpec):
    """``omega_i + (1/N) sum_j K_ij sin(x_j - x_i)``."""

    tag = "kuramoto"

    def __init__(self, dim=2, input_dim=0, omega=DEFAULTS["omega"], K=DEFAULTS["K"], seed=0):
        super().__init__(seed)
        self.state_dim, self.input_dim = int(dim), int(input_dim)
        n = self.state_dim
        self.omega = self._register("omega", _array(omega, (n,), "omega"))
        self.K = self._register("K", _array(K, (n, n), "K"))

    def config(self):
        return {"dim": self.state_dim, "input_dim": self.input_dim}

    def __call__(self, x, u=None, t=0.0):
        return _kuramoto(x, self.omega, self.K, self.state_dim)


class KuramotoResidualDrift(KuramotoDrift):
    """Kuramoto plus a corrective network ``f(x)`` initialised near zero."""

    tag = "kuramoto-residual"

    def __init__(self, dim=2, input_dim=0, omega=DEFAULTS["omega"], K=DEFAULTS["K"],
                 hidden=(32,), residual_scale=1e-2, seed=0):
        super().__init__(dim, input_dim, omega, K, seed)
        self.hidden = [int(h) for h in hidden]
        self.residual_scale = float(residual_scale)
        self.f = Mlp([self.state_dim, *self.hidden, self.state_dim], seed=self.seed + 1,
                     last_scale=self.residual_scale)
        self._children["f"] = self.f

    def config(self):
        return {"dim": self.state_dim, "input_dim": self.input_dim, "hidden": self.hidden,
                "residual_scale": self.residual_scale}

    def __call__(self, x, u=None, t=0.0):
        return _kuramoto(x, self.omega, self.K, self.state_dim) + self.f(x)


class GraphCoupledDrift(DriftSpec):
    """``f(x, u)_i + sum_j A_ij g(x_j, x_i)`` on a fixed adjacency ``A``."""

    tag = "graph-coupled"

    def __init__(self, dim=2, input_dim=0, adjacency=None, hidden=(16,), pair_hidden=(16,), seed=0):
        super().__init__(seed)
        self.state_dim, self.input_dim = int(dim), int(input_dim)
        n = self.state_dim
        A = np.ones((n, n)) - np.eye(n) if adjacency is None else np.asarray(adjacency, dtype=np.float64)
        if A.shape != (n, n):
            raise ParameterError(f"adjacency must be {n}x{n}, got {A.shape}")
        self.A = A
        self.hidden = [int(h) for h in hidden]
        self.pair_hidden = [int(h) for h in pair_hidden]
        self.f = Mlp([n + self.input_dim, *self.hidden, n], seed=self.seed + 1)
        self.g = Mlp([2, *self.pair_hidden, 1], seed=self.seed + 2)
        self._children.update(f=self.f, g=self.g)

    def config(self):
        return {"dim": self.state_dim, "input_dim": self.input_dim, "adjacency": self.A.tolist(),
                "hidden": self.hidden, "pair_hidden": self.pair_hidden}

    def __call__(self, x, u=None, t=0.0):
        x = as_tensor(x)
        n = self.state_dim
        lead = x.shape[:-1]
        local = self.f(_features(x, u, t, self.input_dim, False))
        if not np.any(self.A):
            return local
        xj = ad.broadcast_to(ad.reshape(x, lead + (1, n, 1)), lead + (n, n, 1))
        xi = ad.broadcast_to(ad.reshape(x, lead + (n, 1, 1)), lead + (n, n, 1))
        pair = ad.reshape(self.g(ad.concat([xj, xi], axis=-1)), lead + (n, n))
        return local + ad.sum(pair * self.A, axis=-1)


class NeuralDrift(DriftSpec):
    """Black-box drift ``mu(x, u[, t])``."""

    tag = "neural"

    def __init__(self, dim=1, input_dim=0, hidden=(32,), use_time=False, last_scale=1.0, seed=0):
        super().__init__(seed)
        self.state_dim, self.input_dim = int(dim), int(input_dim)
        self.hidden = [int(h) for h in hidden]
        self.use_time = bool(use_time)
        self.last_scale = float(last_scale)
        width = self.state_dim + self.input_dim + int(self.use_time)
        self.net = Mlp([width, *self.hidden, self.state_dim], seed=self.seed, last_scale=self.last_scale)
        self._children["net"] = self.net

    def config(self):
        return {"dim": self.state_dim, "input_dim": self.input_dim, "hidden": self.hidden,
                "use_time": self.use_time, "last_scale": self.last_scale}

    def __call__(self, x, u=None, t=0.0):
        return self.net(_features(as_tensor(x), u, t, self.input_dim, self.use_time))


class ZeroDrift(DriftSpec):
    """No deterministic dynamics; a baseline prior for model comparison."""

    tag = "zero"

    def __init__(self, dim=1, input_dim=0, seed=0):
        super().__init__(seed)
        self.state_dim, self.input_dim = int(dim), int(input_dim)

    def config(self):
        return {"dim": self.state_dim, "input_dim": self.input_dim}

    def __call__(self, x, u=None, t=0.0):
        x = as_tensor(x)
        return Tensor(np.zeros(x.shape))


class DiffusionSpec(Component):
    state_dim = 0
    input_dim = 0


class ConstantDiagonal(DiffusionSpec):
    """State-independent diagonal noise scale ``b``.

    Learnable ``b`` is stored as ``softplus(b_raw)`` and must start positive;
    ``learnable=False`` keeps ``b`` as a fixed constant, which may be zero.
    """

    tag = "constant"

    def __init__(self, dim=1, input_dim=0, b=DEFAULTS["b"], learnable=True, seed=0):
        super().__init__(seed)
        self.state_dim, self.input_dim = int(dim), int(input_dim)
        self.learnable = bool(learnable)
        b = _array(b, (self.state_dim,), "b")
        if np.any(b < 0):
            raise ParameterError("diffusion scale must be nonnegative")
        if self.learnable:
            self.b_raw = self._register("b_raw", inv_softplus(b))
            self._fixed = None
        else:
            self.b_raw = None
            self._fixed = Tensor(b)

    @property
    def b(self):
        return self._fixed.values.copy() if self._fixed is not None else ad.softplus(self.b_raw).values.copy()

    def config(self):
        cfg = {"dim": self.state_dim, "input_dim": self.input_dim, "learnable": self.learnable}
        if not self.learnable:
            cfg["b"] = self._fixed.values.tolist()
        return cfg

    def __call__(self, x, u=None, t=0.0):
        x = as_tensor(x)
        b = self._fixed if self._fixed is not None else ad.softplus(self.b_raw)
        return ad.broadcast_to(b, x.shape)


class StateDependentDiagonal(DiffusionSpec):
    """Multiplicative diagonal noise ``softplus(Mlp(x, u[, t]))``."""

    tag = "state-dependent"

    def __init__(self, dim=1, input_dim=0, hidden=(16,), use_time=False, seed=0):
        super().__init__(seed)
        self.state_dim, self.input_dim = int(dim), int(input_dim)
        self.hidden = [int(h) for h in hidden]
        self.use_time = bool(use_time)
        width = self.state_dim + self.input_dim + int(self.use_time)
        self.net = Mlp([width, *self.hidden, self.state_dim], output="softplus", seed=self.seed)
        self._children["net"] = self.net

    def config(self):
        return {"dim": self.state_dim, "input_dim": self.input_dim, "hidden": self.hidden,
                "use_time": self.use_time}

    def __call__(self, x, u=None, t=0.0):
        return self.net(_features(as_tensor(x), u, t, self.input_dim, self.use_time))


DRIFTS = {cls.tag: cls for cls in (OUDrift, WilsonCowanDrift, KuramotoDrift, KuramotoResidualDrift,
                                   GraphCoupledDrift, NeuralDrift, ZeroDrift)}
DIFFUSIONS = {cls.tag: cls for cls in (ConstantDiagonal, StateDependentDiagonal)}


def eval_drift(spec, x, u=None, t=0.0):
    x = spec.check(x, u)
    out = spec(x, u, t)
    if out.shape != x.shape:
        raise ParameterError(f"{spec.tag} drift returned {out.shape}, expected {x.shape}")
    return out


def eval_diffusion(spec, x, u=None, t=0.0):
    x = as_tensor(x)
    if x.shape[-1] != spec.state_dim:
        raise ParameterError(f"{spec.tag} diffusion expects state width {spec.state_dim}, got {x.shape}")
    if spec.input_dim and (u is None or as_tensor(u).shape[-1] != spec.input_dim):
        raise ParameterError(f"{spec.tag} diffusion expects input width {spec.input_dim}")
    return spec(x, u, t)


def init_params(template, seed=0):
    """Build a drift or diffusion family from ``{"type": tag, **options}``."""
    template = dict(template)
    tag = template.pop("type", None)
    registry = DRIFTS if tag in DRIFTS else DIFFUSIONS
    if tag not in registry:
        raise ConfigError(f"unknown model family {tag!r}")
    try:
        return registry[tag](**template, seed=seed)
    except TypeError as exc:
        raise ConfigError(f"{tag}: {exc}") from None


def spec_from_dict(data):
    tag = data["type"]
    registry = DRIFTS if tag in DRIFTS else DIFFUSIONS
    if tag not in registry:
        raise ConfigError(f"unknown model family {tag!r}")
    return registry[tag].from_dict(data)
