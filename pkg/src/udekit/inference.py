"""Variational training of latent UDEs.

A prior SDE ``dx = mu_theta(x, u) dt + sigma dW`` and a posterior SDE whose
drift also sees the interpolated observations share one diffusion.  The ELBO
is the observation log-likelihood along posterior paths minus the pathwise KL
between the two, differentiated through every Euler-Maruyama step.
"""
import copy
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import autodiff as ad
from .autodiff import Tape, Tensor, no_grad
from .data import Trajectory, TrajectoryDataset
from .encoder import StimulusEncoder, interpolation_matrix
from .errors import ConfigError, ContractError, DataError, IntegrationError, ParameterError, TrainingError
from .observation import GaussianObservation, PoissonObservation, mean_prediction, observation_from_dict
from .recognition import RecognitionModel, WindowDistribution, reversed_window, sample_window_length
from .sde import SdeSystem, rk4_step, sample_brownian, solve, step_count
from .ude import NeuralDrift, init_params, spec_from_dict

DIFFUSION_FLOOR = 1e-4
FORMAT = "udekit-latent-ude/1"
# offsets separating the initial-state noise stream from the Brownian stream
_X0_STREAM = 0x5EED
_MASK = (1 << 64) - 1


class LatentUdeModel:
    """Encoder, recognition network, prior/posterior drifts, shared diffusion, readout."""

    def __init__(self, encoder, recognition, prior_drift, posterior_drift, diffusion, observation,
                 window=None, diffusion_floor=DIFFUSION_FLOOR, context_lookahead=0):
        self.encoder = encoder
        self.recognition = recognition
        self.prior_drift = prior_drift
        self.posterior_drift = posterior_drift
        self.diffusion = diffusion
        self.observation = observation
        self.window = (window or WindowDistribution.fixed(10)).validate()
        if not diffusion_floor > 0:
            raise ParameterError("diffusion floor must be positive")
        self.diffusion_floor = float(diffusion_floor)
        self.latent_dim = prior_drift.state_dim
        if int(context_lookahead) < 0:
            raise ParameterError("context_lookahead must be nonnegative")
        self.context_lookahead = int(context_lookahead)
        self._check_dims()

    def _check_dims(self):
        d_x, d_u, d_y = self.latent_dim, self.encoder.dim_u, self.observation.obs_dim
        problems = []
        if self.prior_drift.input_dim != d_u:
            problems.append(f"prior drift input {self.prior_drift.input_dim} != encoder output {d_u}")
        if self.posterior_drift.state_dim != d_x or self.posterior_drift.input_dim != self.context_dim:
            problems.append(f"posterior drift must take x plus a context of width {self.context_dim}")
        if self.diffusion.state_dim != d_x or self.diffusion.input_dim not in (0, d_u):
            problems.append("diffusion dims do not match the latent state")
        if self.recognition.latent_dim != d_x or self.recognition.obs_dim != d_y \
                or self.recognition.input_dim != d_u:
            problems.append("recognition dims do not match")
        if self.observation.latent_dim != d_x:
            problems.append("observation latent width does not match")
        if problems:
            raise ParameterError("; ".join(problems))

    @property
    def context_dim(self):
        return self.encoder.dim_u + self.observation.obs_dim * (1 + self.context_lookahead)

    @property
    def modality(self):
        return "poisson" if isinstance(self.observation, PoissonObservation) else "gaussian"

    def groups(self):
        return {"encoder": self.encoder, "recognition": self.recognition, "prior": self.prior_drift,
                "posterior": self.posterior_drift, "diffusion": self.diffusion,
                "observation": self.observation}

    def parameters(self):
        out = {}
        for group, comp in self.groups().items():
            for name, t in comp.parameters().items():
                out[f"{group}.{name}"] = t
        return out

    def sigma(self, x, u=None, t=0.0):
        """Shared diffusion plus the positive floor."""
        u_d = u if self.diffusion.input_dim else None
        return self.diffusion(x, u_d, t) + self.diffusion_floor

    def copy_prior_into_posterior(self):
        """Make the posterior drift reproduce the prior (neural priors only).

        The posterior network has extra input rows for the observation
        context; their weights are zeroed so the two drifts coincide.
        """
        prior, post = self.prior_drift, self.posterior_drift
        if not isinstance(prior, NeuralDrift) or prior.hidden != post.hidden or prior.use_time != post.use_time:
            raise ParameterError("posterior can only copy a neural prior with the same architecture")
        pp, qp = prior.parameters(), post.parameters()
        d_x, d_u = self.latent_dim, prior.input_dim
        for name, t in pp.items():
            q = qp[name]
            if name == "net.W0":
                q.values[...] = 0.0
                q.values[:d_x + d_u] = t.values[:d_x + d_u]
                if prior.use_time:
                    q.values[-1] = t.values[-1]
            else:
                q.values[...] = t.values

    def to_dict(self):
        return {
            "format": FORMAT,
            "latent_dim": self.latent_dim,
            "diffusion_floor": self.diffusion_floor,
            "window": self.window.to_config(),
            "context_lookahead": self.context_lookahead,
            "components": {name: comp.to_dict() for name, comp in self.groups().items()},
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != FORMAT:
            raise ConfigError(f"unrecognised checkpoint format {data.get('format')!r}")
        c = data["components"]
        return cls(StimulusEncoder.from_dict(c["encoder"]), RecognitionModel.from_dict(c["recognition"]),
                   spec_from_dict(c["prior"]), spec_from_dict(c["posterior"]),
                   spec_from_dict(c["diffusion"]), observation_from_dict(c["observation"]),
                   WindowDistribution.from_config(data["window"]), data.get("diffusion_floor", DIFFUSION_FLOOR),
                   data.get("context_lookahead", 0))

    def clone(self):
        return LatentUdeModel.from_dict(copy.deepcopy(self.to_dict()))


def build_model(cfg, stim_dim, obs_dim, modality="gaussian", bin_width=1.0):
    """Assemble a model from the ``model`` section of a run config."""
    cfg = dict(cfg)
    seed = int(cfg.get("seed", 0))
    d_x = int(cfg["latent_dim"])
    enc_cfg = dict(cfg.get("encoder", {}))
    encoder = StimulusEncoder(stim_dim, seed=seed, **enc_cfg)
    d_u = encoder.dim_u
    prior = init_params({**cfg.get("prior", {"type": "neural"}), "dim": d_x, "input_dim": d_u}, seed + 2)
    post_cfg = {"hidden": [32], "use_time": False, "last_scale": 1.0, **cfg.get("posterior", {})}
    lookahead = int(cfg.get("context_lookahead", 0))
    posterior = NeuralDrift(d_x, d_u + obs_dim * (1 + lookahead), seed=seed + 3, **post_cfg)
    diff_cfg = dict(cfg.get("diffusion", {"type": "constant"}))
    diff_input = d_u if diff_cfg.get("type") == "state-dependent" else 0
    diffusion = init_params({**diff_cfg, "dim": d_x, "input_dim": diff_input}, seed + 4)
    rec_cfg = dict(cfg.get("recognition", {}))
    recognition = RecognitionModel(obs_dim, d_u, d_x, seed=seed + 1, **rec_cfg)
    obs_cfg = dict(cfg.get("observation", {}))
    try:
        if modality == "poisson":
            observation = PoissonObservation(d_x, obs_dim, bin_width=bin_width, seed=seed + 5, **obs_cfg)
        else:
            observation = GaussianObservation(d_x, obs_dim, seed=seed + 5, **obs_cfg)
    except TypeError as exc:
        raise ConfigError(f"observation: {exc}") from None
    window = WindowDistribution.from_config(cfg.get("window", {"kind": "fixed", "c": 10}))
    return LatentUdeModel(encoder, recognition, prior, posterior, diffusion, observation, window,
                          context_lookahead=lookahead)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 100
    batch_size: int = 16
    n_paths: int = 1
    dt: float = None
    kl_anneal_fraction: float = 0.2
    seed: int = 0
    final_lr_fraction: float = 1.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be nonnegative")
        if int(self.epochs) < 0 or int(self.batch_size) < 1 or int(self.n_paths) < 1:
            raise ConfigError("epochs must be >= 0; batch_size and n_paths >= 1")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not 0.0 <= self.kl_anneal_fraction <= 1.0:
            raise ConfigError("kl_anneal_fraction must lie in [0, 1]")
        if not 0.0 < self.final_lr_fraction <= 1.0:
            raise ConfigError("final_lr_fraction must lie in (0, 1]")
        self.epochs, self.batch_size, self.n_paths = int(self.epochs), int(self.batch_size), int(self.n_paths)

    def kl_weight(self, epoch):
        ramp = self.kl_anneal_fraction * self.epochs
        if ramp <= 0:
            return 1.0
        return min(1.0, epoch / ramp)

    def lr(self, epoch):
        """Linear decay from ``learning_rate`` to ``final_lr_fraction`` of it at the last epoch."""
        frac = epoch / max(self.epochs - 1, 1)
        return self.learning_rate * (1.0 - (1.0 - self.final_lr_fraction) * frac)


# ---------------------------------------------------------------------------
# posterior pass


def _as_list(batch):
    if isinstance(batch, Trajectory):
        return [batch]
    if isinstance(batch, TrajectoryDataset):
        return list(batch.trajectories)
    return list(batch)


def _grid(times, dt):
    """Solver grid over the sample span and the grid index of every sample."""
    times = np.asarray(times, dtype=np.float64)
    if dt is None:
        dt = float(times[1] - times[0])
    n = step_count((times[0], times[-1]), dt)
    grid = np.linspace(times[0], times[-1], n + 1)
    idx = np.rint((times - times[0]) / dt).astype(int)
    if np.any(np.abs(grid[idx] - times) > 1e-9 * dt):
        raise ParameterError(f"sample times do not fall on the solver grid with dt={dt}")
    return grid, idx, dt


def _path_seed(seed):
    return int(seed) & _MASK


def _window_for(model, tr, c):
    if tr.pre_task is not None:
        return int(tr.pre_task)
    return int(c) if c is not None else model.window.c_max


def kl_path_term(mu_post, mu_prior, sigma, dt):
    """Left-endpoint sum of ``0.5 * sum_channels ((mu_q - mu_p) / sigma)^2 * dt``.

    Arguments are sequences over grid steps (left endpoints) of Tensors of
    matching shape; the sum runs over steps, paths and channels.
    """
    if not (len(mu_post) == len(mu_prior) == len(sigma)):
        raise ParameterError("drift and diffusion sequences must have one entry per step")
    if not mu_post:
        return Tensor(0.0)
    terms = []
    for q, p, s in zip(mu_post, mu_prior, sigma):
        s = ad.as_tensor(s)
        if np.any(s.values < DIFFUSION_FLOOR * (1 - 1e-12)):
            raise ContractError("diffusion channel below the floor")
        terms.append(ad.sum(ad.square((q - p) / s)))
    return ad.scale(ad.sum(ad.stack(terms)), 0.5 * dt)


def _context_grid(times, grid, y, lookahead):
    """Interpolated observations at ``t`` and, with lookahead ``L``, at ``t + j * spacing``.

    Queries past the last sample are clamped to it.  Returns ``(n_grid, B, d_y * (1 + L))``.
    """
    spacing = float(times[1] - times[0])
    flat = y.reshape(len(times), -1)
    parts = []
    for j in range(lookahead + 1):
        query = np.minimum(grid + j * spacing, times[-1])
        parts.append((interpolation_matrix(times, query, "linear") @ flat).reshape(len(grid), *y.shape[1:]))
    return np.concatenate(parts, axis=-1)


def initial_state(model, v, y, times, c):
    """Recognition output for ``x0`` from the first ``c`` samples only.

    ``v`` and ``y`` are ``(N, d)`` or ``(N, B, d)``; rows from ``c`` on are
    never read.
    """
    enc = model.encoder
    v = np.asarray(v, dtype=np.float64)
    u = reversed_window(enc.encode(v[:c], times[:c]), c) if enc.dim_u else None
    return model.recognition.infer_x0(reversed_window(np.asarray(y, dtype=np.float64), c), u)


def _posterior_pass(model, trajs, c, seed, n_paths, dt=None, per_path=False, keep_paths=False):
    """Sample ``n_paths`` posterior paths per trajectory and score them.

    All trajectories share one time grid.  Rows of the batched state are
    ordered path-major: row ``m * B + b`` is path ``m`` of trajectory ``b``,
    driven by Brownian path ``id_b * n_paths + m``.
    """
    B, M = len(trajs), int(n_paths)
    times = trajs[0].times
    for tr in trajs[1:]:
        if tr.times.shape != times.shape or np.any(tr.times != times):
            raise ParameterError("trajectories in one pass must share their sample times")
    grid, obs_idx, dt = _grid(times, dt)
    n_steps = len(grid) - 1
    d_x, d_y = model.latent_dim, model.observation.obs_dim
    if not 1 <= c <= len(times):
        raise ConfigError(f"window length {c} outside [1, {len(times)}]")

    v = np.stack([tr.v for tr in trajs], axis=1)  # (N, B, d_v)
    y = np.stack([tr.y for tr in trajs], axis=1)  # (N, B, d_y)
    enc = model.encoder
    rec = initial_state(model, v, y, times, c)
    seed = _path_seed(seed)
    kl0 = Tensor(0.0)
    kl0_rows = np.zeros(len(trajs))
    if model.recognition.probabilistic:
        mean, log_var = rec
        eps = np.concatenate([_kernels.counter_normals((seed + _X0_STREAM) & _MASK, 1, M, d_x,
                                                       first_path=tr.id * M)[0][:, None, :]
                              for tr in trajs], axis=1)  # (M, B, d_x)
        std = ad.exp(ad.scale(log_var, 0.5))
        x0 = ad.concat([mean + std * Tensor(eps[m]) for m in range(M)], axis=0)
        kl0 = ad.scale(ad.sum(ad.square(mean) + ad.exp(log_var) - 1.0 - log_var), 0.5 * M)
        lv = log_var.values
        kl0_rows = 0.5 * np.sum(mean.values ** 2 + np.exp(lv) - 1.0 - lv, axis=-1)
    else:
        x0 = ad.concat([rec] * M, axis=0) if M > 1 else rec
    MB = M * B

    # inputs and observation context on the grid; interpolation commutes
    # with the per-sample affine encoding, so the map is applied per step
    v_grid = interpolation_matrix(times, grid, enc.interpolation) @ v.reshape(len(times), -1)
    v_grid = np.tile(v_grid.reshape(len(grid), B, -1), (1, M, 1))
    y_grid = _context_grid(times, grid, y, model.context_lookahead)
    y_grid = np.tile(y_grid, (1, M, 1))
    dW = np.empty((n_steps, MB, d_x))
    for b, tr in enumerate(trajs):
        inc = sample_brownian(seed, n_steps, dt, d_x, n_paths=M, first_path=tr.id * M).increments
        dW[:, b::B, :] = inc

    x = x0
    xs = [x]
    q_terms = []
    kl_rows = np.zeros(MB)
    for n in range(n_steps):
        t = grid[n]
        u = enc.encode(v_grid[n][None], [t])[0] if enc.dim_u else None
        ctx = Tensor(y_grid[n]) if u is None else ad.concat([u, Tensor(y_grid[n])], axis=-1)
        mu_q = model.posterior_drift(x, ctx, t)
        mu_p = model.prior_drift(x, u, t)
        sig = model.sigma(x, u, t)
        if np.any(sig.values < model.diffusion_floor * (1 - 1e-12)):
            raise ContractError("diffusion channel below the floor")
        q = ad.square((mu_q - mu_p) / sig)
        kl_rows += q.values.sum(axis=-1)
        q_terms.append(ad.sum(q))
        x = x + mu_q * dt + sig * Tensor(dW[n])
        if not np.all(np.isfinite(x.values)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(x.values), axis=-1))[0])
            raise IntegrationError(f"non-finite posterior state in trajectory {trajs[bad % B].id}", step=n)
        xs.append(x)
    kl = ad.scale(ad.sum(ad.stack(q_terms)), 0.5 * dt) if q_terms else Tensor(0.0)
    kl_rows *= 0.5 * dt

    used = obs_idx[c:]
    out = {"kl": kl, "kl0": kl0, "kl_rows": kl_rows, "kl0_rows": kl0_rows, "grid": grid, "obs_idx": obs_idx, "c": c,
           "n_obs": len(used), "span": float(times[-1] - times[0])}
    if len(used):
        X = ad.stack([xs[i] for i in used])  # (n_obs, MB, d_x)
        Y = np.tile(y[c:], (1, M, 1))
        out["loglik"] = model.observation.log_likelihood(Y, X)
    else:
        X, Y = None, None
        out["loglik"] = Tensor(0.0)
    if per_path:
        with no_grad():
            ll_rows = np.zeros(MB)
            pred = np.zeros((len(used), MB, d_y))
            if X is not None:
                for j in range(MB):
                    xj = Tensor(X.values[:, j])
                    ll_rows[j] = model.observation.log_likelihood(Y[:, j], xj).item()
                    pred[:, j] = mean_prediction(model.observation, xj).values
        out["loglik_rows"], out["pred_rows"], out["y_used"] = ll_rows, pred, y[c:]
    if keep_paths:
        out["states"] = np.stack([xx.values for xx in xs])  # (n_grid, MB, d_x)
    return out


def elbo(model, batch, kl_weight=1.0, seed=0, n_paths=1, dt=None, window_length=None):
    """Monte Carlo ELBO summed over the trajectories of ``batch``, averaged over paths.

    Returns ``(elbo, diagnostics)`` with per-batch ``loglik`` and ``kl`` floats.
    Trajectories must share one time grid; the window length defaults to the
    pre-task marker or the largest admissible window.
    """
    trajs = _as_list(batch)
    c = _window_for(model, trajs[0], window_length)
    try:
        out = _posterior_pass(model, trajs, c, seed, n_paths, dt)
    except IntegrationError as exc:
        raise TrainingError(str(exc), trajectory=[tr.id for tr in trajs], step=exc.step) from exc
    M = float(n_paths)
    kl_total = out["kl"] + out["kl0"]
    value = ad.scale(out["loglik"] - ad.scale(kl_total, kl_weight), 1.0 / M)
    diag = {"loglik": out["loglik"].item() / M, "kl": kl_total.item() / M, "c": c}
    return value, diag


# ---------------------------------------------------------------------------
# optimisation


class Adam:
    """Adaptive-moment ascent/descent over a dict of named leaf tensors."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = float(lr), beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in params.items()}

    def step(self, grads):
        """Descend along ``grads`` (a dict keyed like ``params``)."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.values -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_dict(self):
        return {"t": self.t,
                "m": {k: a.ravel().tolist() for k, a in self.m.items()},
                "v": {k: a.ravel().tolist() for k, a in self.v.items()}}

    def load_state_dict(self, state):
        self.t = int(state["t"])
        for k, p in self.params.items():
            self.m[k] = np.asarray(state["m"][k], dtype=np.float64).reshape(p.shape)
            self.v[k] = np.asarray(state["v"][k], dtype=np.float64).reshape(p.shape)


@dataclass
class TrainState:
    """Everything needed to continue a run: finished epochs, optimiser moments, history."""
    epoch: int = 0
    optimizer: dict = None
    history: list = field(default_factory=list)

    def to_dict(self):
        return {"epoch": self.epoch, "optimizer": self.optimizer, "history": self.history}

    @classmethod
    def from_dict(cls, data):
        return cls(int(data["epoch"]), data.get("optimizer"), [dict(h) for h in data.get("history", [])])


def _batch_seed(master, epoch, batch):
    ss = np.random.SeedSequence([int(master), int(epoch), int(batch)])
    return int(ss.generate_state(1, np.uint64)[0]), np.random.default_rng(ss)


def _groups(model, trajs, c):
    """Bundle trajectories sharing a time grid and window length, in index order."""
    groups = {}
    for tr in trajs:
        key = (tr.times.tobytes(), _window_for(model, tr, c))
        groups.setdefault(key, []).append(tr)
    return [(key[1], members) for key, members in groups.items()]


def train(model, dataset, config, state=None, stop_after=None, callback=None):
    """Maximise the ELBO with Adam; returns ``(model, TrainState)``.

    ``state`` resumes a previous run.  Each epoch shuffles trajectories from
    ``(seed, epoch)``; each minibatch draws its window length and Brownian
    paths from ``(seed, epoch, batch)``, so results depend only on the seed.
    ``stop_after`` ends the run early after that many total epochs.
    """
    if dataset.modality != model.modality:
        raise DataError(f"dataset modality {dataset.modality!r} does not match the "
                        f"{model.modality!r} observation model")
    for tr in dataset.trajectories:
        if tr.v.shape[1] != model.encoder.input_dim or tr.y.shape[1] != model.observation.obs_dim:
            raise DataError(f"trajectory {tr.id}: channel counts do not match the model")
    n_min = min(tr.n_samples for tr in dataset.trajectories)
    model.window.validate(n_min)
    params = model.parameters()
    opt = Adam(params, config.learning_rate)
    state = TrainState() if state is None else state
    if state.optimizer is not None:
        opt.load_state_dict(state.optimizer)
    names = list(params)
    K = len(dataset)
    last = config.epochs if stop_after is None else min(config.epochs, int(stop_after))
    for epoch in range(state.epoch, last):
        w = config.kl_weight(epoch)
        opt.lr = config.lr(epoch)
        order = np.random.default_rng(np.random.SeedSequence([config.seed, epoch])).permutation(K)
        sums = np.zeros(3)
        for bi, start in enumerate(range(0, K, config.batch_size)):
            members = [dataset.trajectories[i] for i in order[start:start + config.batch_size]]
            seed, rng = _batch_seed(config.seed, epoch, bi)
            c = sample_window_length(model.window, rng, n_min)
            grads = {k: np.zeros_like(p.values) for k, p in params.items()}
            for cg, group in _groups(model, members, c):
                with Tape() as tape:
                    try:
                        value, diag = elbo(model, group, w, seed, config.n_paths, config.dt, cg)
                    except TrainingError as exc:
                        raise TrainingError("solver diverged", epoch, bi, exc.trajectory, exc.step) from exc
                    loss = ad.scale(value, -1.0 / len(members))
                g = tape.gradient(loss, [params[k] for k in names])
                for k, gk in zip(names, g):
                    grads[k] += gk
                sums += (diag["loglik"] - diag["kl"], diag["loglik"], diag["kl"])
            bad = [k for k in names if not np.all(np.isfinite(grads[k]))]
            if bad or not np.all(np.isfinite(sums)):
                raise TrainingError(f"non-finite loss or gradient ({', '.join(bad) or 'loss'})",
                                    epoch, bi, [tr.id for tr in members])
            opt.step(grads)
        row = {"epoch": epoch, "elbo": sums[0] / K, "loglik": sums[1] / K, "kl": sums[2] / K}
        state.history.append(row)
        state.epoch = epoch + 1
        state.optimizer = opt.state_dict()
        if callback is not None:
            callback(row)
    return model, state


# ---------------------------------------------------------------------------
# evaluation-mode sampling


def posterior_latents(model, trajectory, n_paths=1, seed=0, dt=None, window_length=None):
    """Posterior paths ``(n_paths, n_grid, d_x)`` and per-sample observation means."""
    grid, obs_idx, dt = _grid(trajectory.times, dt)
    d_x, d_y = model.latent_dim, model.observation.obs_dim
    if n_paths == 0:
        return {"times": grid, "paths": np.zeros((0, len(grid), d_x)),
                "sample_times": trajectory.times, "means": np.zeros((0, len(obs_idx), d_y))}
    c = _window_for(model, trajectory, window_length)
    with no_grad():
        out = _posterior_pass(model, [trajectory], c, seed, n_paths, dt, keep_paths=True)
        paths = np.transpose(out["states"], (1, 0, 2))
        means = mean_prediction(model.observation, Tensor(paths[:, obs_idx])).values
    return {"times": grid, "paths": paths, "sample_times": trajectory.times, "means": means}


def prior_simulate(model, v, times, x0, n_paths=1, seed=0, dt=None, method="euler-maruyama",
                   observe=True):
    """Generative rollouts of the prior SDE driven by stimulus ``v`` at ``times``.

    ``x0`` is ``(d_x,)`` (shared) or ``(n_paths, d_x)``.  Path ``m`` uses
    Brownian path ``m``.  Returns latent paths on the solver grid and, when
    ``observe``, observation samples at ``times``.
    """
    times = np.asarray(times, dtype=np.float64)
    grid, obs_idx, dt = _grid(times, dt)
    d_x = model.latent_dim
    if n_paths == 0:
        return {"times": grid, "paths": np.zeros((0, len(grid), d_x)), "observations": None}
    x0 = np.broadcast_to(np.asarray(x0, dtype=np.float64), (n_paths, d_x)).copy()
    enc = model.encoder
    v = np.asarray(v, dtype=np.float64).reshape(len(times), -1)
    with no_grad():
        encoded = enc.encode(v, times) if enc.dim_u else None
        u_grid = enc.interpolate(encoded, times, grid).values if enc.dim_u else None
        lookup = {float(t): k for k, t in enumerate(grid)}

        def u_fn(t):
            if u_grid is None:
                return None
            k = lookup.get(float(t))
            row = u_grid[k] if k is not None else enc.interpolate(encoded, times, t).values
            return np.broadcast_to(row, (n_paths, row.shape[-1]))

        system = SdeSystem(model.prior_drift, model.sigma, d_x, "multiplicative-diagonal", enc.dim_u)
        bm = None
        if method != "rk4":
            bm = sample_brownian(_path_seed(seed), len(grid) - 1, dt, d_x, n_paths=n_paths)
        path = solve(system, x0, u_fn, (grid[0], grid[-1]), dt, method, bm)
        paths = np.transpose(path.states, (1, 0, 2))
        obs = None
        if observe:
            rng = np.random.default_rng(_path_seed(seed))
            obs = model.observation.sample(Tensor(paths[:, obs_idx]), rng)
    return {"times": grid, "paths": paths, "observations": obs}


def evaluate(model, dataset, seed=0, n_paths=1, dt=None):
    """Held-out metrics averaged over trajectories, plus a per-trajectory breakdown.

    ``loglik_per_step`` is the log-likelihood per scored sample, ``rmse``
    compares the path-averaged observation mean with the data and
    ``kl_per_unit_time`` is the path KL divided by the trajectory span.
    The breakdown also carries ``elbo_per_step``, the evidence bound per
    scored sample, which is the estimate of log p(y) used to compare priors.
    """
    trajs = _as_list(dataset)
    per = {}
    with no_grad():
        for c, group in _groups(model, trajs, None):
            out = _posterior_pass(model, group, c, seed, n_paths, dt, per_path=True)
            B = len(group)
            for b, tr in enumerate(group):
                rows = slice(b, None, B)
                n_obs = max(out["n_obs"], 1)
                ll = out["loglik_rows"][rows].mean()
                kl = out["kl_rows"][rows].mean()
                pred = out["pred_rows"][:, rows].mean(axis=1)
                resid = pred - out["y_used"][:, b]
                per[tr.id] = {
                    "id": tr.id,
                    "loglik_per_step": float(ll / n_obs),
                    "rmse": float(np.sqrt(np.mean(resid ** 2))) if resid.size else 0.0,
                    "kl_per_unit_time": float(kl / out["span"]),
                    "elbo_per_step": float((ll - kl - out["kl0_rows"][b]) / n_obs),
                }
    breakdown = [per[tr.id] for tr in trajs]
    metrics = {k: float(np.mean([r[k] for r in breakdown]))
               for k in ("loglik_per_step", "rmse", "kl_per_unit_time")}
    return metrics, breakdown


def fit_one_step(drift, states, next_states, dt, epochs=200, learning_rate=1e-2, batch_size=256,
                 seed=0, inputs=None):
    """Fit ``drift`` so one rk4 step from ``states`` lands on ``next_states``.

    Residuals are scaled by ``1/dt`` so the loss is a mean squared drift
    error.  Returns the per-epoch loss history.
    """
    states = np.asarray(states, dtype=np.float64)
    next_states = np.asarray(next_states, dtype=np.float64)
    if states.shape != next_states.shape or states.ndim != 2:
        raise ParameterError("states and next_states must be matching (n, d) arrays")
    params = drift.parameters()
    opt = Adam(params, learning_rate)
    names = list(params)
    system = SdeSystem(drift, None, drift.state_dim, input_dim=drift.input_dim)
    n = len(states)
    history = []
    for epoch in range(int(epochs)):
        order = np.random.default_rng(np.random.SeedSequence([int(seed), epoch])).permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            u = None if inputs is None else np.asarray(inputs)[idx]
            with Tape() as tape:
                pred = rk4_step(system, Tensor(states[idx]), u, 0.0, dt)
                resid = (pred - Tensor(next_states[idx])) * (1.0 / dt)
                loss = ad.mean(ad.square(resid))
            if names:
                g = tape.gradient(loss, [params[k] for k in names])
                opt.step(dict(zip(names, g)))
            total += loss.item() * len(idx)
        history.append(total / n)
    return history


def one_step_rmse(drift, states, next_states, dt, inputs=None):
    """RMSE of the rk4-implied drift against finite-difference targets."""
    system = SdeSystem(drift, None, drift.state_dim, input_dim=drift.input_dim)
    with no_grad():
        pred = rk4_step(system, Tensor(np.asarray(states, dtype=np.float64)), inputs, 0.0, dt).values
    return float(np.sqrt(np.mean(((pred - np.asarray(next_states)) / dt) ** 2)))
