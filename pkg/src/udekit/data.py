"""Trajectory datasets and their on-disk layout (CSV pairs plus ``manifest.json``)."""
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError
from .io import read_table, write_table

MODALITIES = ("gaussian", "poisson")


@dataclass
class Trajectory:
    times: np.ndarray
    v: np.ndarray
    y: np.ndarray
    pre_task: Optional[int] = None
    id: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        n = len(self.times)
        self.v = np.asarray(self.v, dtype=np.float64).reshape(n, -1)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(n, -1)

    @property
    def n_samples(self):
        return len(self.times)

    def validate(self):
        if self.n_samples < 2:
            raise DataError(f"trajectory {self.id}: needs at least 2 samples")
        if np.any(np.diff(self.times) <= 0):
            raise DataError(f"trajectory {self.id}: times must be strictly increasing")
        if not (np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.y))):
            raise DataError(f"trajectory {self.id}: non-finite samples")
        if self.pre_task is not None and not 1 <= self.pre_task <= self.n_samples:
            raise DataError(f"trajectory {self.id}: pre-task marker {self.pre_task} out of range")


@dataclass
class TrajectoryDataset:
    trajectories: list
    modality: str = "gaussian"
    bin_width: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def __len__(self):
        return len(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    @property
    def stim_dim(self):
        return self.trajectories[0].v.shape[1]

    @property
    def obs_dim(self):
        return self.trajectories[0].y.shape[1]

    def validate(self):
        if not self.trajectories:
            raise DataError("dataset needs at least one trajectory")
        if self.modality not in MODALITIES:
            raise DataError(f"unknown modality {self.modality!r}")
        dv, dy = self.trajectories[0].v.shape[1], self.trajectories[0].y.shape[1]
        for tr in self.trajectories:
            tr.validate()
            if tr.v.shape[1] != dv or tr.y.shape[1] != dy:
                raise DataError(f"trajectory {tr.id}: channel counts differ from trajectory 0")
            if self.modality == "poisson" and (np.any(tr.y < 0) or np.any(tr.y != np.round(tr.y))):
                raise DataError(f"trajectory {tr.id}: Poisson responses must be nonnegative integers")
        ids = [tr.id for tr in self.trajectories]
        if len(set(ids)) != len(ids):
            raise DataError("trajectory ids must be unique")

    def subset(self, indices):
        return TrajectoryDataset([self.trajectories[i] for i in indices], self.modality,
                                 self.bin_width, dict(self.meta))

    def split(self, n_train):
        """Leading ``n_train`` trajectories and the rest (both must be nonempty)."""
        k = len(self)
        return self.subset(range(n_train)), self.subset(range(n_train, k))

    def save(self, directory, extra=None):
        os.makedirs(directory, exist_ok=True)
        files = []
        for k, tr in enumerate(self.trajectories):
            stim, resp = f"stimulus_{k:04d}.csv", f"response_{k:04d}.csv"
            write_table(os.path.join(directory, stim), tr.times, tr.v, "v")
            write_table(os.path.join(directory, resp), tr.times, tr.y, "y")
            files.append({"id": tr.id, "stimulus": stim, "response": resp, "pre_task": tr.pre_task})
        first = self.trajectories[0]
        spacing = np.diff(first.times)
        manifest = {
            "K": len(self),
            "N": first.n_samples,
            "dt": float(spacing[0]) if np.allclose(spacing, spacing[0], rtol=1e-9) else None,
            "dims": {"stimulus": self.stim_dim, "response": self.obs_dim},
            "modality": self.modality,
            "bin_width": self.bin_width,
            "trajectories": files,
        }
        manifest.update(self.meta)
        if extra:
            manifest.update(extra)
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        return manifest

    @classmethod
    def load(cls, directory):
        path = os.path.join(directory, "manifest.json")
        if not os.path.exists(path):
            raise DataError(f"no manifest.json in {directory}")
        with open(path) as fh:
            manifest = json.load(fh)
        trajs = []
        for entry in manifest["trajectories"]:
            t, v = read_table(os.path.join(directory, entry["stimulus"]), "v")
            t2, y = read_table(os.path.join(directory, entry["response"]), "y")
            if t.tobytes() != t2.tobytes():
                raise DataError(f"trajectory {entry['id']}: stimulus and response times differ")
            trajs.append(Trajectory(t, v, y, entry.get("pre_task"), entry["id"]))
        meta = {k: manifest[k] for k in ("generator", "seed", "parameters") if k in manifest}
        ds = cls(trajs, manifest.get("modality", "gaussian"), manifest.get("bin_width", 1.0), meta)
        dims = manifest.get("dims", {})
        if dims and (dims.get("stimulus") != ds.stim_dim or dims.get("response") != ds.obs_dim):
            raise DataError("manifest dims do not match the CSV files")
        return ds
