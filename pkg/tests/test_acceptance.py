"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` (the lines are also
repeated in pytest's terminal summary), or as a script.
"""
import copy
import json
import os
import time

import numpy as np
import pytest

import udekit.autodiff as ad
from udekit.autodiff import Tensor, no_grad
from udekit.cli import main as cli_main
from udekit.data import Trajectory, TrajectoryDataset
from udekit.generators import generate
from udekit.inference import (LatentUdeModel, TrainConfig, build_model, elbo, evaluate, fit_one_step,
                              initial_state, kl_path_term, one_step_rmse, train, _posterior_pass)
from udekit.sde import BrownianPath, SdeSystem, sample_brownian, solve
from udekit.ude import ConstantDiagonal, KuramotoDrift, KuramotoResidualDrift, OUDrift

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIGS = os.path.join(os.path.dirname(HERE), "configs")
RESULTS = []


def report(number, title, ok, detail):
    line = f"ACCEPTANCE {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
    RESULTS.append(line)
    print(line)
    return ok


def load_config(name):
    with open(os.path.join(CONFIGS, name)) as fh:
        return json.load(fh)


# 1 ------------------------------------------------------------------------

def test_c1_weak_accuracy():
    t0 = time.perf_counter()
    a, m, b, x0, T, dt, n = 1.0, 2.0, 0.4, 0.0, 2.0, 1e-3, 10_000
    system = SdeSystem(OUDrift(1, 0, a=a, m=m), ConstantDiagonal(1, 0, b=b, learnable=False), 1)
    steps = int(round(T / dt))
    with no_grad():
        path = solve(system, Tensor(np.full((n, 1), x0)), None, (0.0, T), dt,
                     bm=sample_brownian(2024, steps, dt, 1, n_paths=n))
    xT = path.xs[-1].values[:, 0]
    mean_exact = m + (x0 - m) * np.exp(-a * T)
    var_exact = b**2 / (2 * a) * (1 - np.exp(-2 * a * T))
    mean_hat, var_hat = xT.mean(), xT.var(ddof=1)
    se_mean, se_var = np.sqrt(var_hat / n), var_hat * np.sqrt(2.0 / (n - 1))
    runtime = time.perf_counter() - t0
    ok = abs(mean_hat - mean_exact) < 3 * se_mean and abs(var_hat - var_exact) < 3 * se_var and runtime < 30
    assert report(1, "solver weak accuracy", ok,
                  f"mean {mean_hat:.5f} vs {mean_exact:.5f} (3SE {3 * se_mean:.1e}), var {var_hat:.5f} vs "
                  f"{var_exact:.5f} (3SE {3 * se_var:.1e}), {runtime:.1f}s")


# 2 ------------------------------------------------------------------------

def _strong_errors(method, n_paths=512, seed=99):
    # oracle for dx = x dW, x0 = 1: X_T = exp(W_T - T/2); one fine path aggregated per level
    system = SdeSystem(lambda x, u, t: Tensor(np.zeros(x.shape)), lambda x, u, t: x, 1,
                       noise_kind="multiplicative-diagonal")
    fine = 2**10
    inc = sample_brownian(seed, fine, 1.0 / fine, 1, n_paths=n_paths).increments
    exact = np.exp(inc.sum(axis=0)[:, 0] - 0.5)
    dts, errs = [], []
    for level in range(6, 11):
        n = 2**level
        coarse = inc.reshape(n, fine // n, n_paths, 1).sum(axis=1)
        xT = solve(system, Tensor(np.ones((n_paths, 1))), None, (0.0, 1.0), 1.0 / n, method=method,
                   bm=BrownianPath(seed, 1.0 / n, coarse)).xs[-1].values[:, 0]
        dts.append(1.0 / n)
        errs.append(np.mean(np.abs(xT - exact)))
    return np.polyfit(np.log(dts), np.log(errs), 1)[0]


def test_c2_strong_order():
    t0 = time.perf_counter()
    em, mil = _strong_errors("euler-maruyama"), _strong_errors("milstein")
    runtime = time.perf_counter() - t0
    ok = 0.4 <= em <= 0.6 and mil >= 0.9 and runtime < 60
    assert report(2, "solver strong order", ok, f"EM slope {em:.3f}, Milstein slope {mil:.3f}, {runtime:.1f}s")


# 3 ------------------------------------------------------------------------

def test_c3_gradient_integrity():
    t0 = time.perf_counter()
    cfg = {"latent_dim": 2, "seed": 11, "prior": {"type": "neural", "hidden": [4]},
           "posterior": {"hidden": [4]}, "diffusion": {"type": "state-dependent", "hidden": [3]},
           "encoder": {"kind": "affine", "time_channel": True},
           "recognition": {"hidden": 3, "probabilistic": True},
           "observation": {"readout": "affine", "s": 0.3}, "window": {"kind": "fixed", "c": 3},
           "context_lookahead": 1}
    model = build_model(cfg, 1, 2)
    rng = np.random.default_rng(12)
    tr = Trajectory(np.arange(11) * 0.1, rng.normal(size=(11, 1)), rng.normal(size=(11, 2)))
    params = model.parameters()
    groups = sorted({k.split(".")[0] for k in params})
    _, per = ad.grad_check_tensors(lambda: elbo(model, tr, kl_weight=1.0, seed=13)[0],
                                   list(params.values()), details=True)
    worst = {}
    for name, errs in zip(params, per):
        g = name.split(".")[0]
        worst[g] = max(worst.get(g, 0.0), float(errs.max()) if errs.size else 0.0)
    runtime = time.perf_counter() - t0
    ok = len(groups) == 6 and max(worst.values()) < 1e-4 and runtime < 60
    assert report(3, "ELBO gradient integrity", ok,
                  ", ".join(f"{g} {e:.1e}" for g, e in sorted(worst.items())) + f", {runtime:.1f}s")


# 4 ------------------------------------------------------------------------

def test_c4_ou_recovery(tmp_path, capsys):
    t0 = time.perf_counter()
    cfg = load_config("ou_recovery.json")
    cfg["output"] = str(tmp_path / "ou")
    path = tmp_path / "ou.json"
    path.write_text(json.dumps(cfg))
    assert cli_main(["simulate", str(path)]) == 0
    assert cli_main(["train", str(path)]) == 0
    runtime = time.perf_counter() - t0
    with open(tmp_path / "ou" / "model.json") as fh:
        model = LatentUdeModel.from_dict(json.load(fh)["model"])
    a, m = float(model.prior_drift.a[0]), float(model.prior_drift.m[0])
    b = float(model.diffusion.b[0])
    truth = cfg["dataset"]["params"]
    errs = {k: abs(v - truth[k]) / truth[k] for k, v in (("a", a), ("m", m), ("b", b))}
    artifacts = all(os.path.exists(tmp_path / "ou" / f) for f in ("model.json", "history.csv", "metrics.json"))
    ok = errs["a"] < 0.15 and errs["m"] < 0.15 and errs["b"] < 0.25 and runtime < 300 and artifacts
    capsys.readouterr()
    assert report(4, "OU known-unknowns recovery", ok,
                  f"a={a:.3f} ({errs['a']:.1%}), m={m:.3f} ({errs['m']:.1%}), b={b:.3f} ({errs['b']:.1%}), "
                  f"{runtime:.0f}s")


# 5 ------------------------------------------------------------------------

def test_c5_kl_identities():
    cfg = {"latent_dim": 2, "seed": 4, "prior": {"type": "neural", "hidden": [6]}, "posterior": {"hidden": [6]},
           "diffusion": {"type": "constant", "b": 0.3}, "observation": {"readout": "identity"},
           "recognition": {"hidden": 4}, "window": {"kind": "fixed", "c": 4}}
    model = build_model(cfg, 0, 2)
    model.copy_prior_into_posterior()
    rng = np.random.default_rng(5)
    tr = Trajectory(np.arange(30) * 0.05, np.zeros((30, 0)), rng.normal(size=(30, 2)))
    with no_grad():
        kl_copy = _posterior_pass(model, [tr], 4, seed=6, n_paths=4)["kl"].item()
    errors = []
    for dq, dp, s, T, n in ((1.0, 0.0, 1.0, 1.0, 1000), (2.5, -0.5, 0.7, 3.0, 300), (0.3, 0.1, 2.0, 0.5, 50)):
        dt = T / n
        kl = kl_path_term([Tensor([dq])] * n, [Tensor([dp])] * n, [Tensor([s])] * n, dt).item()
        errors.append(abs(kl - 0.5 * ((dq - dp) / s) ** 2 * T))
    ok = kl_copy <= 1e-25 and max(errors) < 1e-10
    assert report(5, "KL identities", ok, f"copied-drift KL {kl_copy:.1e}, closed-form max error {max(errors):.1e}")


# 6 ------------------------------------------------------------------------

def _one_step_pairs(latents):
    x, xn = latents[:, :-1].reshape(-1, latents.shape[-1]), latents[:, 1:].reshape(-1, latents.shape[-1])
    wrapped = np.mod(x + np.pi, 2 * np.pi) - np.pi
    return wrapped, wrapped + (xn - x)


def test_c6_residual_learning():
    t0 = time.perf_counter()
    cfg = load_config("kuramoto_residual.json")["dataset"]
    _, latents = generate(cfg)
    dt, d = cfg["dt"], cfg["dim"]
    x_train, y_train = _one_step_pairs(latents[:80])
    x_test, y_test = _one_step_pairs(latents[80:])
    mech = KuramotoDrift(d, 0, omega=1.0, K=0.0)
    fit_one_step(mech, x_train, y_train, dt, epochs=200, learning_rate=0.05, batch_size=512, seed=1)
    resid = KuramotoResidualDrift(d, 0, omega=1.0, K=0.0, hidden=[32], seed=2)
    fit_one_step(resid, x_train, y_train, dt, epochs=200, learning_rate=0.01, batch_size=512, seed=1)
    r_mech, r_res = one_step_rmse(mech, x_test, y_test, dt), one_step_rmse(resid, x_test, y_test, dt)
    reduction = 1 - r_res / r_mech
    runtime = time.perf_counter() - t0
    ok = reduction >= 0.5 and runtime < 300
    assert report(6, "Kuramoto residual learning", ok,
                  f"held-out drift RMSE {r_mech:.4f} -> {r_res:.4f} ({reduction:.0%} reduction), {runtime:.0f}s")


# 7 ------------------------------------------------------------------------

def test_c7_model_comparison():
    # held-out log p(y) is estimated by the per-step evidence bound; the
    # reconstruction term alone is printed alongside for reference
    t0 = time.perf_counter()
    cfg = load_config("ou_recovery.json")
    train_set, _ = generate(cfg["dataset"])
    held_out, _ = generate({**cfg["dataset"], "seed": cfg["dataset"]["seed"] + 1, "K": 16})
    rows = []
    for seed in range(5):
        scores = {}
        for prior in ("ou", "zero"):
            model_cfg = {**copy.deepcopy(cfg["model"]), "seed": seed, "prior": {"type": prior}}
            model = build_model(model_cfg, 0, 1)
            train(model, train_set, TrainConfig(**{**cfg["train"], "epochs": 300, "seed": seed}))
            metrics, per = evaluate(model, held_out, seed=100 + seed, n_paths=8)
            scores[prior] = (float(np.mean([r["elbo_per_step"] for r in per])), metrics["loglik_per_step"])
        rows.append(scores)
    wins = [r["ou"][0] >= r["zero"][0] for r in rows]
    runtime = time.perf_counter() - t0
    detail = "; ".join(f"seed {i}: {r['ou'][0]:.4f} vs {r['zero'][0]:.4f} (recon {r['ou'][1]:.4f} vs "
                       f"{r['zero'][1]:.4f})" for i, r in enumerate(rows))
    assert report(7, "model comparison", all(wins), f"held-out ELBO/step OU vs zero prior, {detail}, {runtime:.0f}s")


# 8 ------------------------------------------------------------------------

def test_c8_no_future_leak():
    rng = np.random.default_rng(8)
    failures = 0
    for case in range(100):
        d_v, d_y, d_x = int(rng.integers(0, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        n = int(rng.integers(5, 40))
        c = int(rng.integers(1, n))
        cfg = {"latent_dim": d_x, "seed": case, "prior": {"type": "neural", "hidden": [4]},
               "encoder": {"kind": "affine" if d_v and case % 2 else "identity", "time_channel": bool(case % 3 == 0)},
               "recognition": {"hidden": int(rng.integers(2, 9)), "probabilistic": bool(case % 4 == 0)},
               "observation": {"readout": "affine"}, "window": {"kind": "fixed", "c": c}}
        model = build_model(cfg, d_v, d_y)
        times = np.cumsum(rng.uniform(0.01, 0.2, n))
        v, y = rng.normal(size=(n, d_v)), rng.normal(size=(n, d_y))
        with no_grad():
            before = initial_state(model, v, y, times, c)
            v2, y2 = v.copy(), y.copy()
            j = int(rng.integers(c, n))
            v2[j:] += rng.normal(scale=10.0, size=v2[j:].shape)
            y2[j:] += rng.normal(scale=10.0, size=y2[j:].shape)
            after = initial_state(model, v2, y2, times, c)
        pack = lambda r: b"".join(t.values.tobytes() for t in (r if isinstance(r, tuple) else (r,)))
        failures += pack(before) != pack(after)
    assert report(8, "no future leak", failures == 0, f"{100 - failures}/100 randomized cases bitwise invariant")


# 9 ------------------------------------------------------------------------

def test_c9_end_to_end_reproducibility(tmp_path, capsys):
    cfg = load_config("ou_recovery.json")
    cfg["dataset"].update(K=12, N=80)
    cfg["train"].update(epochs=5, holdout=4)
    cfg["output"] = str(tmp_path / "run")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    outputs = []
    for _ in range(2):
        assert cli_main(["simulate", str(path)]) == 0
        assert cli_main(["train", str(path)]) == 0
        capsys.readouterr()
        assert cli_main(["eval", "--model", str(tmp_path / "run" / "model.json"),
                         "--data", str(tmp_path / "run" / "data")]) == 0
        printed = capsys.readouterr().out
        outputs.append(((tmp_path / "run" / "history.csv").read_bytes(),
                        (tmp_path / "run" / "metrics.json").read_bytes(), printed))
        for f in ("history.csv", "metrics.json", "model.json"):
            os.remove(tmp_path / "run" / f)
    ok = outputs[0] == outputs[1]
    assert report(9, "end-to-end reproducibility", ok,
                  "history.csv, metrics.json and eval output bit-identical" if ok else "outputs differ")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
