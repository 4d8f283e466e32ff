"""Ground-truth simulators producing synthetic stimulus/response datasets."""
import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor, no_grad
from .data import Trajectory, TrajectoryDataset
from .errors import ConfigError
from .observation import GaussianObservation, PoissonObservation
from .sde import SdeSystem, sample_brownian, solve
from .ude import (ConstantDiagonal, GraphCoupledDrift, KuramotoDrift, NeuralDrift, OUDrift,
                  WilsonCowanDrift)

GENERATORS = ("ou", "wilson-cowan", "kuramoto", "kuramoto-residual", "graph-coupled", "neural")
STIMULI = ("none", "sine", "steps")


class PerturbedKuramoto:
    """Kuramoto drift plus ``eps * sin(harmonic * x)`` on every oscillator."""

    def __init__(self, base, eps=0.3, harmonic=2.0):
        self.base, self.eps, self.harmonic = base, float(eps), float(harmonic)
        self.state_dim, self.input_dim = base.state_dim, base.input_dim

    def __call__(self, x, u=None, t=0.0):
        x = as_tensor(x)
        return self.base(x, u, t) + ad.scale(ad.sin(ad.scale(x, self.harmonic)), self.eps)


def _drift(name, dim, d_u, p, seed):
    if name == "ou":
        return OUDrift(dim, d_u, a=p.get("a", 1.0), m=p.get("m", 0.0))
    if name == "wilson-cowan":
        return WilsonCowanDrift(dim, d_u, tau=p.get("tau", 1.0), J=p.get("J", 0.0), B=p.get("B", 0.0))
    if name in ("kuramoto", "kuramoto-residual"):
        base = KuramotoDrift(dim, d_u, omega=p.get("omega", 0.0), K=p.get("K", 0.0))
        if name == "kuramoto":
            return base
        return PerturbedKuramoto(base, p.get("eps", 0.3), p.get("harmonic", 2.0))
    if name == "graph-coupled":
        adjacency = p.get("adjacency", (np.ones((dim, dim)) - np.eye(dim)).tolist())
        return GraphCoupledDrift(dim, d_u, adjacency=adjacency, hidden=p.get("hidden", [16]),
                                 pair_hidden=p.get("pair_hidden", [16]), seed=p.get("net_seed", seed))
    if name == "neural":
        return NeuralDrift(dim, d_u, hidden=p.get("hidden", [16]), seed=p.get("net_seed", seed))
    raise ConfigError(f"unknown generator {name!r}; choose from {GENERATORS}")


def stimulus(kind, times, dim, rng, amplitude=1.0, period=1.0):
    """Deterministic-given-rng stimulus rows ``(N, dim)``."""
    n = len(times)
    if kind == "none" or dim == 0:
        return np.zeros((n, 0))
    if kind == "sine":
        phase = rng.uniform(0, 2 * np.pi, dim)
        freq = rng.uniform(0.5, 1.5, dim) * 2 * np.pi / period
        return amplitude * np.sin(np.outer(times, freq) + phase)
    if kind == "steps":
        edges = np.searchsorted(np.arange(times[0], times[-1] + period, period), times, side="right") - 1
        levels = rng.uniform(-amplitude, amplitude, (edges.max() + 1, dim))
        return levels[edges]
    raise ConfigError(f"unknown stimulus kind {kind!r}; choose from {STIMULI}")


def generate(cfg):
    """Simulate a dataset from a generator config; returns ``(dataset, latents)``.

    Latent paths are integrated by Euler-Maruyama on ``dt / substeps`` and
    sampled every ``dt``.  Stimulus, initial states, Brownian paths and
    observation noise come from independent streams of ``seed``.
    """
    cfg = dict(cfg)
    name = cfg.get("generator")
    if name not in GENERATORS:
        raise ConfigError(f"unknown generator {name!r}; choose from {GENERATORS}")
    K, N, dt = int(cfg.get("K", 32)), int(cfg.get("N", 200)), float(cfg.get("dt", 0.01))
    seed = int(cfg.get("seed", 0))
    dim = int(cfg.get("dim", 1 if name in ("ou", "wilson-cowan") else 4))
    sub = int(cfg.get("substeps", 1))
    if K < 1 or N < 2 or not dt > 0 or sub < 1 or dim < 1:
        raise ConfigError("need K >= 1, N >= 2, dt > 0, substeps >= 1 and dim >= 1")
    params = dict(cfg.get("params", {}))
    stim_cfg = dict(cfg.get("stimulus", {"kind": "none"}))
    d_v = int(stim_cfg.get("dim", 1)) if stim_cfg.get("kind", "none") != "none" else 0
    obs_cfg = dict(cfg.get("observation", {}))
    modality = obs_cfg.get("modality", "gaussian")

    drift = _drift(name, dim, d_v, params, seed)
    b = params.get("b", 0.1)
    diffusion = ConstantDiagonal(dim, 0, b=b, learnable=False)
    h = dt / sub
    times = np.arange(N) * dt
    fine = np.arange((N - 1) * sub + 1) * h

    streams = np.random.SeedSequence(seed).spawn(3)
    stim_rng, x0_rng, obs_rng = (np.random.default_rng(s) for s in streams)
    x0_cfg = cfg.get("x0", {"low": -1.0, "high": 1.0})
    if isinstance(x0_cfg, dict):
        x0 = x0_rng.uniform(x0_cfg.get("low", -1.0), x0_cfg.get("high", 1.0), (K, dim))
    else:
        x0 = np.broadcast_to(np.asarray(x0_cfg, dtype=np.float64), (K, dim)).copy()
    v = np.stack([stimulus(stim_cfg.get("kind", "none"), times, d_v, stim_rng,
                           stim_cfg.get("amplitude", 1.0), stim_cfg.get("period", 1.0))
                  for _ in range(K)], axis=1)  # (N, K, d_v)

    obs_dim = int(obs_cfg.get("obs_dim", dim))
    readout = obs_cfg.get("readout", "identity")
    if modality == "gaussian":
        obs = GaussianObservation(dim, obs_dim, readout=readout, s=obs_cfg.get("s", 0.1), learn_s=False,
                                  seed=seed + 11)
    elif modality == "poisson":
        obs = PoissonObservation(dim, obs_dim, bin_width=obs_cfg.get("bin_width", dt),
                                 readout=obs_cfg.get("readout", "affine"), seed=seed + 11)
        if "baseline" in obs_cfg and obs.d is not None:
            obs.d.values[...] = obs_cfg["baseline"]
    else:
        raise ConfigError(f"unknown modality {modality!r}")

    with no_grad():
        if d_v:
            v_fine = np.stack([np.stack([np.interp(fine, times, v[:, k, j]) for j in range(d_v)], -1)
                               for k in range(K)], axis=1)
            lookup = {float(t): i for i, t in enumerate(fine)}

            def u_fn(t):
                return v_fine[lookup[float(t)]]
        else:
            u_fn = None
        system = SdeSystem(drift, diffusion, dim, input_dim=d_v)
        bm = sample_brownian(seed, len(fine) - 1, h, dim, n_paths=K)
        path = solve(system, x0, u_fn, (fine[0], fine[-1]), h, "euler-maruyama", bm)
        latents = path.states[::sub]  # (N, K, dim)
        if name in ("kuramoto", "kuramoto-residual") and cfg.get("wrap_phases", False):
            latents = np.mod(latents + np.pi, 2 * np.pi) - np.pi
        y = obs.sample(Tensor(latents), obs_rng)

    trajs = [Trajectory(times, v[:, k], y[:, k], cfg.get("pre_task"), k) for k in range(K)]
    meta = {"generator": name, "seed": seed,
            "parameters": {"params": params, "dim": dim, "substeps": sub, "stimulus": stim_cfg,
                           "observation": obs_cfg, "x0": x0_cfg}}
    bw = obs.bin_width if modality == "poisson" else 1.0
    return TrajectoryDataset(trajs, modality, bw, meta), np.transpose(latents, (1, 0, 2))
