"""Observation models ``p(y | x)``: Gaussian readouts and Poisson counts."""
import numpy as np
from scipy.special import gammaln

from . import _kernels
from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ConfigError, DataError, ParameterError
from .ude import Component, Mlp, glorot_bound, inv_softplus

READOUTS = ("identity", "affine", "mlp")


class _Readout(Component):
    """Map latent states to observation channels (fixed identity, affine or Mlp)."""

    def _build_readout(self, readout, hidden, rng):
        if readout not in READOUTS:
            raise ParameterError(f"unknown readout {readout!r}")
        self.readout = readout
        self.hidden = [int(h) for h in hidden]
        self.C = self.d = self.net = None
        if readout == "identity":
            if self.latent_dim != self.obs_dim:
                raise ParameterError("identity readout requires obs_dim == latent_dim")
        elif readout == "affine":
            if self.latent_dim == self.obs_dim:
                w = np.eye(self.latent_dim)
            else:
                b = glorot_bound(self.latent_dim, self.obs_dim)
                w = rng.uniform(-b, b, (self.latent_dim, self.obs_dim))
            self.C = self._register("C", w)
            self.d = self._register("d", np.zeros(self.obs_dim))
        else:
            self.net = Mlp([self.latent_dim, *self.hidden, self.obs_dim], seed=self.seed + 1)
            self._children["net"] = self.net

    def predict(self, x):
        x = as_tensor(x)
        if x.shape[-1] != self.latent_dim:
            raise ParameterError(f"observation expects latent width {self.latent_dim}, got {x.shape}")
        if self.readout == "identity":
            return x
        if self.readout == "affine":
            return x @ self.C + self.d
        return self.net(x)

    def _check_y(self, y, x):
        y = np.asarray(y.values if isinstance(y, Tensor) else y, dtype=np.float64)
        if y.shape[-1] != self.obs_dim:
            raise ParameterError(f"expected {self.obs_dim} observation channels, got {y.shape}")
        if y.shape[:-1] != as_tensor(x).shape[:-1]:
            raise ParameterError(f"observation rows {y.shape} do not match states {as_tensor(x).shape}")
        return y


class GaussianObservation(_Readout):
    """``y = readout(x) + s * eps`` with per-channel scale ``s``.

    Learnable ``s`` is ``softplus(s_raw)``; ``learn_s=False`` fixes it (zero
    allowed for noiseless generation).
    """

    tag = "gaussian"

    def __init__(self, latent_dim, obs_dim, readout="identity", s=0.1, learn_s=True, hidden=(16,), seed=0):
        super().__init__(seed)
        self.latent_dim, self.obs_dim = int(latent_dim), int(obs_dim)
        self._build_readout(readout, hidden, np.random.default_rng(self.seed))
        self.learn_s = bool(learn_s)
        s = np.broadcast_to(np.asarray(s, dtype=np.float64), (self.obs_dim,)).copy()
        if self.learn_s:
            self.s_raw = self._register("s_raw", inv_softplus(s))
            self._fixed_s = None
        else:
            if np.any(s < 0):
                raise ParameterError("noise scale must be nonnegative")
            self.s_raw = None
            self._fixed_s = Tensor(s)

    def config(self):
        cfg = {"latent_dim": self.latent_dim, "obs_dim": self.obs_dim, "readout": self.readout,
               "learn_s": self.learn_s, "hidden": self.hidden}
        if not self.learn_s:
            cfg["s"] = self._fixed_s.values.tolist()
        return cfg

    def scale(self):
        return self._fixed_s if self._fixed_s is not None else ad.softplus(self.s_raw)

    @property
    def s(self):
        return self.scale().values.copy()

    def log_likelihood(self, y, x):
        """Sum over every row and channel of the Gaussian log-density."""
        y = self._check_y(y, x)
        mean = self.predict(x)
        s = self.scale()
        rows = int(np.prod(y.shape[:-1], dtype=int))
        resid = (Tensor(y) - mean) / s
        return (ad.scale(ad.sum(ad.square(resid)), -0.5)
                - ad.scale(ad.sum(ad.log(s)), rows)
                - 0.5 * rows * self.obs_dim * np.log(2.0 * np.pi))

    def sample(self, x, rng):
        mean = self.predict(x).values
        return mean + self.scale().values * rng.standard_normal(mean.shape)


class PoissonObservation(_Readout):
    """Counts per bin ``y ~ Poisson(softplus(C x + d) * bin_width)``."""

    tag = "poisson"

    def __init__(self, latent_dim, obs_dim, bin_width=1.0, readout="affine", hidden=(16,), seed=0):
        super().__init__(seed)
        self.latent_dim, self.obs_dim = int(latent_dim), int(obs_dim)
        if not bin_width > 0:
            raise ParameterError("bin width must be positive")
        self.bin_width = float(bin_width)
        self._build_readout(readout, hidden, np.random.default_rng(self.seed))

    def config(self):
        return {"latent_dim": self.latent_dim, "obs_dim": self.obs_dim, "bin_width": self.bin_width,
                "readout": self.readout, "hidden": self.hidden}

    def rate(self, x):
        return ad.softplus(self.predict(x))

    def predict_mean(self, x):
        return self.rate(x) * self.bin_width

    @staticmethod
    def validate_counts(y):
        y = np.asarray(y, dtype=np.float64)
        if np.any(y < 0) or np.any(y != np.round(y)) or not np.all(np.isfinite(y)):
            raise DataError("Poisson observations must be nonnegative integers")
        return y

    def log_likelihood(self, y, x):
        y = self.validate_counts(self._check_y(y, x))
        lam = self.predict_mean(x)
        return ad.sum(Tensor(y) * ad.log(lam)) - ad.sum(lam) - float(np.sum(gammaln(y + 1.0)))

    def sample(self, x, rng):
        lam = self.predict_mean(x).values
        return _kernels.poisson_counts(lam, int(rng.integers(0, 2**63 - 1))).astype(np.float64)


OBSERVATIONS = {GaussianObservation.tag: GaussianObservation, PoissonObservation.tag: PoissonObservation}


def observation_from_dict(data):
    if data["type"] not in OBSERVATIONS:
        raise ConfigError(f"unknown observation model {data['type']!r}")
    return OBSERVATIONS[data["type"]].from_dict(data)


def mean_prediction(obs, x):
    """Observation mean: readout for Gaussian, ``rate * bin_width`` for Poisson."""
    return obs.predict_mean(x) if isinstance(obs, PoissonObservation) else obs.predict(x)


def log_likelihood(obs, y_n, x_n):
    return obs.log_likelihood(y_n, x_n)


def sample(obs, x_n, rng):
    return obs.sample(x_n, rng)
