"""Initial-state inference from a time-reversed conditioning window."""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ConfigError, ParameterError
from .ude import Component, glorot_bound


@dataclass(frozen=True)
class WindowDistribution:
    """Conditioning-window length: fixed ``c``, or uniform on ``[c_min, c_max]``."""
    kind: str = "fixed"
    c_min: int = 10
    c_max: int = 10

    @classmethod
    def fixed(cls, c):
        return cls("fixed", int(c), int(c))

    @classmethod
    def uniform(cls, c_min, c_max):
        return cls("uniform", int(c_min), int(c_max))

    @classmethod
    def from_config(cls, cfg):
        cfg = dict(cfg)
        kind = cfg.get("kind", "fixed")
        if kind == "fixed":
            return cls.fixed(cfg.get("c", 10))
        if kind == "uniform":
            return cls.uniform(cfg["c_min"], cfg["c_max"])
        raise ConfigError(f"unknown window kind {kind!r}")

    def to_config(self):
        if self.kind == "fixed":
            return {"kind": "fixed", "c": self.c_min}
        return {"kind": "uniform", "c_min": self.c_min, "c_max": self.c_max}

    def validate(self, n_samples=None):
        if self.kind not in ("fixed", "uniform"):
            raise ConfigError(f"unknown window kind {self.kind!r}")
        if self.kind == "fixed" and self.c_min != self.c_max:
            raise ConfigError("fixed window needs c_min == c_max")
        if not 1 <= self.c_min <= self.c_max:
            raise ConfigError(f"window bounds must satisfy 1 <= c_min <= c_max, got "
                              f"[{self.c_min}, {self.c_max}]")
        if n_samples is not None and self.c_max > n_samples:
            raise ConfigError(f"window length {self.c_max} exceeds trajectory length {n_samples}")
        return self


def sample_window_length(dist, rng, n_samples=None):
    dist.validate(n_samples)
    if dist.kind == "fixed":
        return dist.c_min
    return int(rng.integers(dist.c_min, dist.c_max + 1))


def reversed_window(samples, c):
    """First ``c`` rows of ``samples`` in reverse order (latest first)."""
    if c < 1 or c > samples.shape[0]:
        raise ParameterError(f"window length {c} outside [1, {samples.shape[0]}]")
    return samples[c - 1::-1] if isinstance(samples, Tensor) else np.asarray(samples)[c - 1::-1]


class RecognitionModel(Component):
    """Gated recurrent cell (update gate + tanh candidate) with a linear readout.

    In probabilistic mode the readout emits ``[mean, log_var]`` for ``x0``.
    """

    tag = "recognition"

    def __init__(self, obs_dim, input_dim, latent_dim, hidden=32, probabilistic=False, seed=0):
        super().__init__(seed)
        self.obs_dim, self.input_dim = int(obs_dim), int(input_dim)
        self.latent_dim, self.hidden = int(latent_dim), int(hidden)
        self.probabilistic = bool(probabilistic)
        d_in, h = self.obs_dim + self.input_dim, self.hidden
        d_out = self.latent_dim * (2 if self.probabilistic else 1)
        rng = np.random.default_rng(self.seed)

        def glorot(fi, fo):
            b = glorot_bound(fi, fo)
            return rng.uniform(-b, b, (fi, fo))

        self.Wz = self._register("Wz", glorot(d_in, h))
        self.Uz = self._register("Uz", glorot(h, h))
        self.bz = self._register("bz", np.zeros(h))
        self.Wh = self._register("Wh", glorot(d_in, h))
        self.Uh = self._register("Uh", glorot(h, h))
        self.bh = self._register("bh", np.zeros(h))
        self.Wo = self._register("Wo", glorot(h, d_out))
        self.bo = self._register("bo", np.zeros(d_out))

    def config(self):
        return {"obs_dim": self.obs_dim, "input_dim": self.input_dim, "latent_dim": self.latent_dim,
                "hidden": self.hidden, "probabilistic": self.probabilistic}

    def infer_x0(self, y_window, u_window=None):
        """Consume rows in the given (already reversed) order; read out the last state.

        Windows are ``(c, d)`` or ``(c, B, d)``.  Returns a Tensor, or
        ``(mean, log_var)`` in probabilistic mode.
        """
        y = as_tensor(y_window)
        if y.ndim not in (2, 3) or y.shape[-1] != self.obs_dim:
            raise ParameterError(f"recognition expects y rows of width {self.obs_dim}, got {y.shape}")
        if self.input_dim:
            if u_window is None:
                raise ParameterError("recognition expects an input window")
            u = as_tensor(u_window)
            if u.shape[:-1] != y.shape[:-1] or u.shape[-1] != self.input_dim:
                raise ParameterError(f"window length mismatch: y {y.shape}, u {u.shape}")
            rows = ad.concat([y, u], axis=-1)
        else:
            if u_window is not None and np.shape(as_tensor(u_window).values)[0] != y.shape[0]:
                raise ParameterError("window length mismatch")
            rows = y
        h = Tensor(np.zeros(y.shape[1:-1] + (self.hidden,)))
        for k in range(rows.shape[0]):
            r = rows[k]
            z = ad.sigmoid(r @ self.Wz + h @ self.Uz + self.bz)
            cand = ad.tanh(r @ self.Wh + h @ self.Uh + self.bh)
            h = h + z * (cand - h)
        out = h @ self.Wo + self.bo
        if not self.probabilistic:
            return out
        d = self.latent_dim
        return out[..., :d], out[..., d:]


def infer_x0(model, y_window, u_window=None):
    return model.infer_x0(y_window, u_window)
