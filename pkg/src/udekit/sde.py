"""Brownian increments and fixed-step SDE solvers (Itô convention).

States are ``(d_x,)`` vectors or ``(B, d_x)`` batches; every step is built from
:mod:`udekit.autodiff` primitives so a solve under an active tape can be
differentiated end to end.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels
from . import autodiff as ad
from .autodiff import Tape, Tensor, as_tensor
from .io import read_table, write_table
from .errors import IntegrationError, ParameterError, UnsupportedSolverError

NOISE_KINDS = ("additive-diagonal", "multiplicative-diagonal", "general")
METHODS = ("euler-maruyama", "milstein", "rk4")


@dataclass
class SdeSystem:
    """Forced SDE ``dx = drift(x, u, t) dt + diffusion(x, u, t) dW``.

    ``diffusion`` may be ``None`` for an ODE.  Diagonal kinds return a vector
    of the state's shape; ``general`` returns a ``(..., d_x, d_w)`` matrix.
    """
    drift: Callable
    diffusion: Optional[Callable]
    state_dim: int
    noise_kind: str = "additive-diagonal"
    input_dim: int = 0
    noise_dim: Optional[int] = None

    def __post_init__(self):
        if self.noise_kind not in NOISE_KINDS:
            raise ParameterError(f"unknown noise kind {self.noise_kind!r}")
        if self.noise_dim is None:
            self.noise_dim = self.state_dim
        if self.noise_kind != "general" and self.noise_dim != self.state_dim:
            raise ParameterError("diagonal noise requires noise_dim == state_dim")


@dataclass(frozen=True)
class BrownianPath:
    seed: int
    dt: float
    increments: np.ndarray
    first_path: int = 0

    @property
    def n_steps(self):
        return self.increments.shape[0]


def sample_brownian(seed, n_steps, dt, d_w, n_paths=None, first_path=0):
    """Brownian increments ``~ Normal(0, dt)`` from the counter-based generator.

    The increment for (path ``p``, step ``n``, channel ``c``) depends only on
    ``(seed, p, n, c)``, so path ``k`` of a batch is the same however many
    paths are drawn alongside it.  Shape is ``(n_steps, d_w)``, or
    ``(n_steps, n_paths, d_w)`` when ``n_paths`` is given.
    """
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if n_steps < 1:
        raise ParameterError(f"n_steps must be >= 1, got {n_steps}")
    count = 1 if n_paths is None else int(n_paths)
    z = _kernels.counter_normals(seed, int(n_steps), count, int(d_w), first_path=first_path)
    z *= np.sqrt(dt)
    if n_paths is None:
        z = z[:, 0, :]
    return BrownianPath(int(seed), float(dt), z, int(first_path))


@dataclass
class Path:
    times: np.ndarray
    xs: list = field(repr=False)

    @property
    def states(self):
        return np.stack([x.values for x in self.xs])

    def stacked(self):
        return ad.stack(self.xs)

    def to_csv(self, file, index=None):
        write_path_csv(self, file, index=index)


def write_path_csv(path, file, index=None):
    """Write ``t,x0,x1,...`` rows at 17 significant digits."""
    states = path.states
    if states.ndim == 3:
        if index is None:
            raise ParameterError("batched path: pass index= to select one path")
        states = states[:, index, :]
    write_table(file, path.times, states, "x")


def read_path_csv(file):
    times, states = read_table(file, "x")
    return Path(times, [Tensor(row) for row in states])


def _checked(value, what, step):
    value = as_tensor(value)
    if not np.all(np.isfinite(value.values)):
        raise IntegrationError(f"non-finite {what} output", step=step)
    return value


def _noise_term(sys, sig, dW):
    if sys.noise_kind == "general":
        if sig.ndim == 2:
            return ad.matmul(sig, dW)
        dw = np.asarray(dW)
        return ad.sum(sig * dw.reshape(dw.shape[:-1] + (1, dw.shape[-1])), axis=-1)
    return sig * dW


def _input_at(u, t):
    return u(t) if callable(u) else u


def em_step(sys, x, u, t, dt, dW, step=None):
    """One Euler-Maruyama step ``x + drift dt + diffusion dW``."""
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    x = as_tensor(x)
    uu = _input_at(u, t)
    mu = _checked(sys.drift(x, uu, t), "drift", step)
    out = x + mu * dt
    if sys.diffusion is not None:
        sig = _checked(sys.diffusion(x, uu, t), "diffusion", step)
        out = out + _noise_term(sys, sig, dW)
    return out


def _diagonal_slope(sys, x, u, t):
    """``d sigma_i / d x_i`` per channel, by reverse mode on a private tape."""
    with Tape() as inner:
        xl = Tensor(x.values, requires_grad=True)
        sig = as_tensor(sys.diffusion(xl, u, t))
        channels = [ad.sum(sig[..., i]) for i in range(sys.state_dim)]
    slope = np.empty_like(x.values)
    for i, ch in enumerate(channels):
        slope[..., i] = inner.gradient(ch, [xl])[0][..., i]
    return slope


def milstein_step(sys, x, u, t, dt, dW, step=None):
    """Euler-Maruyama plus the Itô correction ``0.5 s_i s_i' (dW_i^2 - dt)``.

    The slope factor is a constant on the outer tape (no second derivatives),
    so parameter gradients flow through ``s_i`` only.
    """
    if sys.noise_kind == "general":
        raise UnsupportedSolverError("milstein supports diagonal noise only")
    if sys.diffusion is None or sys.noise_kind == "additive-diagonal":
        return em_step(sys, x, u, t, dt, dW, step=step)
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    x = as_tensor(x)
    uu = _input_at(u, t)
    mu = _checked(sys.drift(x, uu, t), "drift", step)
    sig = _checked(sys.diffusion(x, uu, t), "diffusion", step)
    slope = _diagonal_slope(sys, x, uu, t)
    dW = np.asarray(dW)
    corr = sig * (0.5 * slope * (dW * dW - dt))
    return x + mu * dt + sig * dW + corr


def rk4_step(sys, x, u, t, dt, step=None):
    """Classical fourth-order Runge-Kutta on the drift; ``u`` may be callable."""
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    x = as_tensor(x)
    h = 0.5 * dt
    f = sys.drift
    k1 = _checked(f(x, _input_at(u, t), t), "drift", step)
    k2 = _checked(f(x + k1 * h, _input_at(u, t + h), t + h), "drift", step)
    k3 = _checked(f(x + k2 * h, _input_at(u, t + h), t + h), "drift", step)
    k4 = _checked(f(x + k3 * dt, _input_at(u, t + dt), t + dt), "drift", step)
    return x + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0)


def step_count(t_span, dt):
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    t0, t1 = float(t_span[0]), float(t_span[1])
    span = t1 - t0
    if span < 0:
        raise ParameterError(f"t_span must be increasing, got {t_span}")
    n = int(round(span / dt))
    if abs(n * dt - span) > 1e-9 * max(1.0, abs(span)):
        raise ParameterError(f"span {span} is not an integer multiple of dt={dt}")
    return n


def solve(sys, x0, u_fn, t_span, dt, method="euler-maruyama", bm=None):
    """Integrate on the fixed grid ``t_span[0] + k dt``.

    ``u_fn`` is ``None`` or a callable of time.  Stochastic methods need a
    :class:`BrownianPath` with exactly one increment row per step.
    """
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}; choose from {METHODS}")
    n = step_count(t_span, dt)
    times = np.linspace(float(t_span[0]), float(t_span[1]), n + 1)
    stochastic = method != "rk4" and sys.diffusion is not None
    if stochastic and n > 0:
        if bm is None:
            raise ParameterError(f"{method} needs a BrownianPath")
        if bm.n_steps != n:
            raise ParameterError(f"BrownianPath has {bm.n_steps} steps, solve needs {n}")
        if abs(bm.dt - dt) > 1e-12 * dt:
            raise ParameterError(f"BrownianPath dt={bm.dt} differs from solver dt={dt}")
    x = as_tensor(x0)
    xs = [x]
    u = u_fn if u_fn is not None else (lambda t: None)
    for k in range(n):
        t = times[k]
        h = times[k + 1] - t
        if method == "rk4":
            x = rk4_step(sys, x, u, t, h, step=k)
        elif method == "milstein":
            x = milstein_step(sys, x, u(t), t, h, bm.increments[k] if stochastic else None, step=k)
        else:
            x = em_step(sys, x, u(t), t, h, bm.increments[k] if stochastic else None, step=k)
        if not np.all(np.isfinite(x.values)):
            raise IntegrationError("non-finite state", step=k)
        xs.append(x)
    return Path(times, xs)
