"""Command line: ``udekit simulate|train|eval``.

Exit codes: 0 success, 1 config error, 2 training divergence, 3 data/model mismatch.
"""
import argparse
import json
import os
import sys

import numpy as np

from . import config as run_config
from .data import TrajectoryDataset
from .errors import ConfigError, DataError, ParameterError, TrainingError, UdekitError
from .generators import generate
from .inference import LatentUdeModel, TrainConfig, TrainState, build_model, evaluate, posterior_latents, train

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_MISMATCH = 0, 1, 2, 3
METRIC_KEYS = ("loglik_per_step", "rmse", "kl_per_unit_time")
_TRAIN_FIELDS = ("learning_rate", "epochs", "batch_size", "n_paths", "dt", "kl_anneal_fraction", "seed",
                 "final_lr_fraction")


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _data_dir(cfg):
    ds = cfg["dataset"]
    if "path" in ds:
        return ds["path"]
    return os.path.join(cfg["output"], "data")


def cmd_simulate(cfg):
    ds_cfg = cfg["dataset"]
    if "generator" not in ds_cfg:
        raise ConfigError("simulate needs a dataset generator section")
    dataset, _ = generate(ds_cfg)
    directory = _data_dir(cfg)
    manifest = dataset.save(directory)
    print(f"wrote {manifest['K']} trajectories to {directory}")
    return EXIT_OK


def _write_history(history, path):
    with open(path, "w") as fh:
        fh.write("epoch,elbo,loglik,kl\n")
        for row in history:
            fh.write(f"{row['epoch']},{row['elbo']:.17g},{row['loglik']:.17g},{row['kl']:.17g}\n")


def _check_compatible(model, dataset):
    if dataset.stim_dim != model.encoder.input_dim or dataset.obs_dim != model.observation.obs_dim:
        raise DataError(f"dataset has {dataset.stim_dim} stimulus / {dataset.obs_dim} response channels; "
                        f"model expects {model.encoder.input_dim} / {model.observation.obs_dim}")
    if dataset.modality != model.modality:
        raise DataError(f"dataset modality {dataset.modality!r} does not match model {model.modality!r}")


def cmd_train(cfg, resume=False, stop_after=None):
    out = cfg["output"]
    dataset = TrajectoryDataset.load(_data_dir(cfg))
    tcfg = dict(cfg.get("train", {}))
    holdout = int(tcfg.pop("holdout", 0))
    eval_paths = int(tcfg.pop("eval_paths", 1))
    config = TrainConfig(**{k: tcfg[k] for k in _TRAIN_FIELDS if k in tcfg})
    if holdout >= len(dataset):
        raise ConfigError(f"holdout {holdout} leaves no training trajectories")
    train_set, test_set = dataset.split(len(dataset) - holdout) if holdout else (dataset, None)
    os.makedirs(out, exist_ok=True)
    ckpt = os.path.join(out, "model.json")
    state = None
    if resume:
        if not os.path.exists(ckpt):
            raise DataError(f"nothing to resume: {ckpt} not found")
        with open(ckpt) as fh:
            saved = json.load(fh)
        model = LatentUdeModel.from_dict(saved["model"])
        state = TrainState.from_dict(saved["training_state"])
    else:
        model = build_model(cfg.get("model", {"latent_dim": dataset.obs_dim}), dataset.stim_dim,
                            dataset.obs_dim, dataset.modality, dataset.bin_width)
    _check_compatible(model, dataset)
    try:
        model, state = train(model, train_set, config, state=state, stop_after=stop_after)
    finally:
        if state is not None:
            _dump({"model": model.to_dict(), "training_state": state.to_dict()}, ckpt)
    _write_history(state.history, os.path.join(out, "history.csv"))
    target = test_set if test_set is not None else train_set
    metrics, per = evaluate(model, target, seed=config.seed, n_paths=eval_paths, dt=config.dt)
    _dump(metrics, os.path.join(out, "metrics.json"))
    _dump({"evaluated_on": "holdout" if test_set is not None else "train", "per_trajectory": per},
          os.path.join(out, "metrics_breakdown.json"))
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def _plot(model, dataset, directory, seed, n_paths, limit):
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "udekit"
    paths = []
    for k, tr in enumerate(dataset.trajectories[:limit]):
        res = posterior_latents(model, tr, n_paths=n_paths, seed=seed)
        mean = res["means"].mean(axis=0)
        fig, ax = plt.subplots(figsize=(6, 3))
        for j in range(tr.y.shape[1]):
            line, = ax.plot(tr.times, tr.y[:, j], ".", ms=2, label=f"observed y{j}")
            ax.plot(tr.times, mean[:, j], "-", color=line.get_color(), label=f"posterior mean y{j}")
        ax.set_xlabel("t")
        ax.set_title(f"trajectory {tr.id}")
        ax.legend(fontsize=6)
        fig.tight_layout()
        path = os.path.join(directory, f"reconstruction_{k:04d}.svg")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths


def cmd_eval(model_path, data_path, plot=False, seed=0, n_paths=1, plot_dir=None, max_plots=4):
    try:
        with open(model_path) as fh:
            saved = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model {model_path}: {exc}") from None
    model = LatentUdeModel.from_dict(saved.get("model", saved))
    dataset = TrajectoryDataset.load(data_path)
    _check_compatible(model, dataset)
    metrics, _ = evaluate(model, dataset, seed=seed, n_paths=n_paths)
    print(json.dumps({k: metrics[k] for k in METRIC_KEYS}, sort_keys=True))
    if plot:
        directory = plot_dir or os.path.dirname(os.path.abspath(model_path))
        os.makedirs(directory, exist_ok=True)
        for p in _plot(model, dataset, directory, seed, max(n_paths, 1), max_plots):
            print(f"wrote {p}", file=sys.stderr)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="udekit", description="Latent UDE toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("config")
    p = sub.add_parser("train", help="train a latent UDE")
    p.add_argument("config")
    p.add_argument("--resume", action="store_true", help="continue from <output>/model.json")
    p.add_argument("--stop-after", type=int, default=None, metavar="EPOCHS",
                   help="stop once this many epochs are complete")
    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--plot", action="store_true", help="write SVG reconstructions")
    p.add_argument("--plot-dir", default=None)
    p.add_argument("--max-plots", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--paths", type=int, default=1)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    np.seterr(over="ignore", invalid="ignore")
    try:
        if args.command == "eval":
            return cmd_eval(args.model, args.data, args.plot, args.seed, args.paths, args.plot_dir,
                            args.max_plots)
        cfg = run_config.load(args.config)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_train(cfg, args.resume, args.stop_after)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, ParameterError) as exc:
        print(f"data/model mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except UdekitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
