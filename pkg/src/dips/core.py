"""Shared value types: trajectories, datasets, normalization and their files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

ContactMode = tuple[int, ...]
ContactSequence = tuple[ContactMode, ...]

STD_FLOOR = 1e-6


class DipsError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(DipsError, ValueError):
    def __init__(self, what: str, expected, actual):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}")


class FingerprintError(DipsError):
    """Artifacts built for one task were combined with another task."""


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One mode segment: ``states`` is (H, d_s), ``controls`` is (H, d_u)."""

    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        s = np.array(self.states, dtype=float)
        u = np.array(self.controls, dtype=float)
        if s.ndim != 2 or u.ndim != 2:
            raise DimensionError("trajectory rank", 2, (s.ndim, u.ndim))
        if s.shape[0] != u.shape[0]:
            raise DimensionError("controls length", s.shape[0], u.shape[0])
        s.flags.writeable = False
        u.flags.writeable = False
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "controls", u)

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    def to_array(self) -> np.ndarray:
        """Per-step rows ``[s_t | u_t]`` with shape (H, d_s + d_u)."""
        return np.concatenate([self.states, self.controls], axis=1)

    @classmethod
    def from_array(cls, arr: np.ndarray, d_s: int) -> "Trajectory":
        arr = np.asarray(arr, dtype=float)
        return cls(arr[:, :d_s], arr[:, d_s:])

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return np.array_equal(self.states, other.states) and np.array_equal(
            self.controls, other.controls
        )

    __hash__ = None


def flatten(traj: Trajectory) -> np.ndarray:
    return traj.to_array().reshape(-1)


def unflatten(v, H: int, d_s: int, d_u: int) -> Trajectory:
    v = np.asarray(v, dtype=float)
    size = H * (d_s + d_u)
    if v.ndim != 1 or v.shape[0] != size:
        raise DimensionError("flat trajectory length", size, v.shape)
    return Trajectory.from_array(v.reshape(H, d_s + d_u), d_s)


class TrajectoryScaler(TransformerMixin, BaseEstimator):
    """Per-dimension standardization with a floor on the standard deviation.

    Works on flattened trajectories (n_samples, H * (d_s + d_u)).
    """

    def __init__(self, std_floor: float = STD_FLOOR):
        self.std_floor = std_floor

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.mean_ = X.mean(axis=0)
        self.scale_ = np.maximum(X.std(axis=0), self.std_floor)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.n_features_in_:
            raise DimensionError("feature count", self.n_features_in_, X.shape[-1])
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.n_features_in_:
            raise DimensionError("feature count", self.n_features_in_, X.shape[-1])
        return X * self.scale_ + self.mean_

    def to_dict(self) -> dict:
        check_is_fitted(self, "mean_")
        return {
            "std_floor": self.std_floor,
            "mean": self.mean_.tolist(),
            "std": self.scale_.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryScaler":
        sc = cls(std_floor=d.get("std_floor", STD_FLOOR))
        sc.mean_ = np.asarray(d["mean"], dtype=np.float64)
        sc.scale_ = np.asarray(d["std"], dtype=np.float64)
        sc.n_features_in_ = sc.mean_.shape[0]
        return sc


@dataclass
class Dataset:
    """Demonstration segments for one task.

    ``trajectories`` has shape (N, H, d_s + d_u); ``modes`` holds indices into
    the task's mode table.
    """

    task: "object"
    trajectories: np.ndarray
    modes: np.ndarray
    demo: np.ndarray | None = None
    segment: np.ndarray | None = None
    low_quality: np.ndarray | None = None
    scaler: TrajectoryScaler | None = field(default=None, repr=False)

    def __post_init__(self):
        self.trajectories = np.asarray(self.trajectories, dtype=float)
        self.modes = np.asarray(self.modes, dtype=int)
        n = len(self.modes)
        expected = (n, self.task.horizon, self.task.step_dim)
        if self.trajectories.shape != expected:
            raise DimensionError("dataset trajectories", expected, self.trajectories.shape)
        if self.demo is None:
            self.demo = np.arange(n)
        if self.segment is None:
            self.segment = np.zeros(n, dtype=int)
        if self.low_quality is None:
            self.low_quality = np.zeros(n, dtype=bool)
        self.demo = np.asarray(self.demo, dtype=int)
        self.segment = np.asarray(self.segment, dtype=int)
        self.low_quality = np.asarray(self.low_quality, dtype=bool)
        if self.scaler is None and n:
            self.scaler = TrajectoryScaler().fit(self.flat())

    def __len__(self) -> int:
        return len(self.modes)

    def flat(self) -> np.ndarray:
        return self.trajectories.reshape(len(self), -1)

    def entries(self) -> Iterator[tuple[Trajectory, ContactMode]]:
        d_s = self.task.state_dim
        for arr, m in zip(self.trajectories, self.modes):
            yield Trajectory.from_array(arr, d_s), self.task.modes[m]

    def normalized(self) -> np.ndarray:
        return self.scaler.transform(self.flat())

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.task,
            self.trajectories[idx],
            self.modes[idx],
            self.demo[idx],
            self.segment[idx],
            self.low_quality[idx],
            scaler=self.scaler,
        )


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".stats.json")


def save_dataset(ds: Dataset, path) -> Path:
    """Write JSON Lines entries plus a ``<path>.stats.json`` sidecar."""
    path = Path(path)
    task = ds.task
    d_s = task.state_dim
    lines = []
    for i in range(len(ds)):
        arr = ds.trajectories[i]
        rec = {
            "contact_mode": list(task.modes[ds.modes[i]]),
            "states": arr[:, :d_s].tolist(),
            "controls": arr[:, d_s:].tolist(),
            "demo": int(ds.demo[i]),
            "segment": int(ds.segment[i]),
            "low_quality": bool(ds.low_quality[i]),
        }
        lines.append(json.dumps(rec, separators=(",", ":")))
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    side = {
        "task": task.to_dict(),
        "task_fingerprint": task.fingerprint(),
        "n_entries": len(ds),
        "normalization": ds.scaler.to_dict(),
    }
    sidecar_path(path).write_text(json.dumps(side, sort_keys=True, indent=1), encoding="utf-8")
    return path


def load_dataset(path, task=None) -> Dataset:
    from .domain import task_from_dict

    path = Path(path)
    side = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    file_task = task_from_dict(side["task"])
    if file_task.fingerprint() != side["task_fingerprint"]:
        raise FingerprintError("dataset sidecar fingerprint does not match its task record")
    if task is not None and task.fingerprint() != side["task_fingerprint"]:
        raise FingerprintError(
            f"dataset was built for task {side['task_fingerprint'][:12]}, "
            f"not {task.fingerprint()[:12]}"
        )
    task = file_task
    trajs, modes, demo, seg, lowq = [], [], [], [], []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        s = np.asarray(rec["states"], dtype=float)
        u = np.asarray(rec["controls"], dtype=float)
        trajs.append(np.concatenate([s, u], axis=1))
        modes.append(task.mode_index(tuple(rec["contact_mode"])))
        demo.append(rec.get("demo", len(demo)))
        seg.append(rec.get("segment", 0))
        lowq.append(rec.get("low_quality", False))
    arr = np.asarray(trajs, dtype=float).reshape(len(trajs), task.horizon, task.step_dim)
    scaler = TrajectoryScaler.from_dict(side["normalization"])
    return Dataset(task, arr, modes, demo, seg, lowq, scaler=scaler)
