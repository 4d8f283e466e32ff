"""Discrete stimulus samples to a continuous-time input signal."""
import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ExtrapolationError, ParameterError
from .ude import Component, glorot_bound

INTERPOLATIONS = ("linear", "zero-order-hold")


def _snap_tolerance(times):
    if len(times) < 2:
        return 1e-12
    return 1e-9 * float(np.min(np.diff(times)))


def interpolation_matrix(times, query, scheme="linear"):
    """Weights ``M`` with ``M @ samples`` = interpolated values at ``query``.

    Queries outside ``[times[0], times[-1]]`` raise :class:`ExtrapolationError`;
    queries within rounding distance of a knot snap to it.
    """
    if scheme not in INTERPOLATIONS:
        raise ParameterError(f"unknown interpolation {scheme!r}")
    times = np.asarray(times, dtype=np.float64)
    query = np.atleast_1d(np.asarray(query, dtype=np.float64))
    n = len(times)
    if n == 0:
        raise ParameterError("no samples to interpolate")
    if n > 1 and np.any(np.diff(times) <= 0):
        raise ParameterError("sample times must be strictly increasing")
    tol = _snap_tolerance(times)
    if np.any(query < times[0] - tol) or np.any(query > times[-1] + tol):
        bad = query[(query < times[0] - tol) | (query > times[-1] + tol)][0]
        raise ExtrapolationError(f"t={bad!r} outside sample range [{times[0]!r}, {times[-1]!r}]")
    M = np.zeros((len(query), n))
    if n == 1:
        M[:, 0] = 1.0
        return M
    k = np.searchsorted(times, query + tol, side="right") - 1
    k = np.clip(k, 0, n - 1)
    on_knot = np.abs(query - times[k]) <= tol
    rows = np.arange(len(query))
    if scheme == "zero-order-hold":
        M[rows, k] = 1.0
        return M
    M[rows[on_knot], k[on_knot]] = 1.0
    off = ~on_knot
    lo = k[off]
    w = (query[off] - times[lo]) / (times[lo + 1] - times[lo])
    M[rows[off], lo] = 1.0 - w
    M[rows[off], lo + 1] = w
    return M


def apply_interpolation(M, samples):
    """``M @ samples`` along the leading (time) axis of a Tensor or array."""
    samples = as_tensor(samples)
    rest = samples.shape[1:]
    flat = ad.reshape(samples, (samples.shape[0], int(np.prod(rest, dtype=int))))
    return ad.reshape(ad.matmul(Tensor(M), flat), (M.shape[0],) + rest)


class StimulusEncoder(Component):
    """Per-sample identity or affine map ``W v + c``, then interpolation.

    ``output_dim`` is the width of the affine map; the time channel, when
    enabled, is appended after it, so ``dim_u = output_dim + time_channel``.
    """

    tag = "encoder"

    def __init__(self, input_dim, kind="identity", output_dim=None, interpolation="linear",
                 time_channel=False, seed=0):
        super().__init__(seed)
        if kind not in ("identity", "affine"):
            raise ParameterError(f"unknown encoding {kind!r}")
        if interpolation not in INTERPOLATIONS:
            raise ParameterError(f"unknown interpolation {interpolation!r}")
        self.input_dim = int(input_dim)
        self.kind = kind
        self.interpolation = interpolation
        self.time_channel = bool(time_channel)
        if kind == "identity":
            if output_dim is not None and int(output_dim) != self.input_dim:
                raise ParameterError("identity encoding requires output_dim == input_dim")
            self.output_dim = self.input_dim
            self.W = self.c = None
        else:
            self.output_dim = self.input_dim if output_dim is None else int(output_dim)
            rng = np.random.default_rng(self.seed)
            if self.output_dim == self.input_dim:
                w = np.eye(self.input_dim)
            else:
                bound = glorot_bound(self.input_dim, self.output_dim)
                w = rng.uniform(-bound, bound, (self.output_dim, self.input_dim))
            self.W = self._register("W", w)
            self.c = self._register("c", np.zeros(self.output_dim))

    @property
    def dim_u(self):
        return self.output_dim + int(self.time_channel)

    def config(self):
        return {"input_dim": self.input_dim, "kind": self.kind, "output_dim": self.output_dim,
                "interpolation": self.interpolation, "time_channel": self.time_channel}

    def encode(self, v, times):
        """Encode ``(N, d_v)`` or ``(N, B, d_v)`` samples into ``(N, ..., d_u)``."""
        times = np.asarray(times, dtype=np.float64)
        v = as_tensor(v)
        if v.ndim < 2 or v.shape[-1] != self.input_dim:
            raise ParameterError(f"encoder expects {self.input_dim} stimulus channels, got {v.shape}")
        if v.shape[0] != len(times):
            raise ParameterError(f"{v.shape[0]} samples but {len(times)} times")
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise ParameterError("sample times must be strictly increasing")
        out = v
        if self.kind == "affine":
            out = v @ ad.transpose(self.W) + self.c
        if self.time_channel:
            tcol = np.broadcast_to(times.reshape((-1,) + (1,) * (v.ndim - 1)), v.shape[:-1] + (1,))
            out = ad.concat([out, Tensor(np.array(tcol))], axis=-1)
        return out

    def interpolate(self, encoded, times, t):
        """Continuous input at one or many query times."""
        M = interpolation_matrix(times, t, self.interpolation)
        out = apply_interpolation(M, encoded)
        return out[0] if np.ndim(t) == 0 else out


def encode(enc, v_samples, times):
    return enc.encode(v_samples, times)


def interpolate(enc, encoded, times, t):
    return enc.interpolate(encoded, times, t)
