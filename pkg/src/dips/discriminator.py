"""Realism scorer for (trajectory, mode) pairs.

A small MLP with a logistic head, trained with binary cross-entropy to tell
dataset trajectories (label 1) from diffusion samples (label 0).  Inputs are
normalized with the dataset statistics, matching the diffusion model's space.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import neural
from .core import Dataset, DimensionError, DipsError, FingerprintError, TrajectoryScaler
from .domain import task_from_dict


class NonFiniteInputError(DipsError):
    """A trajectory handed to the scorer contains NaN or inf."""


class TrajectoryDiscriminator(ClassifierMixin, BaseEstimator):
    """Binary classifier over flattened trajectories plus a mode one-hot.

    ``fit(X, y, modes=...)`` takes raw trajectories ``X`` of shape
    (n, H, step_dim) or (n, flat_dim), labels ``y`` (1 = real) and mode
    indices.  ``realism`` returns P(real) directly.
    """

    def __init__(
        self,
        task=None,
        hidden=(128, 128),
        activation="softplus",
        steps=2000,
        batch_size=64,
        learning_rate=1e-3,
        random_state=0,
    ):
        self.task = task
        self.hidden = hidden
        self.activation = activation
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _init(self, scaler, zero=False):
        task = self.task
        rng = np.random.default_rng(np.random.SeedSequence(self.random_state, spawn_key=(0,)))
        sizes = (task.flat_dim + len(task.modes), *self.hidden, 1)
        self.params_ = neural.init_mlp(sizes, rng, hidden=self.activation, output="logistic", zero=zero)
        self.adam_ = neural.AdamState.for_params(self.params_, self.learning_rate)
        self.scaler_ = scaler
        self.classes_ = np.array([0, 1])
        self.loss_curve_ = []
        return self

    @classmethod
    def untrained(cls, task, scaler, **kw) -> "TrajectoryDiscriminator":
        """All-zero weights: scores exactly 0.5 everywhere."""
        return cls(task=task, **kw)._init(scaler, zero=True)

    def _features(self, X, modes) -> np.ndarray:
        task = self.task
        X = np.asarray(X, dtype=float)
        X = X.reshape(len(X), -1) if X.ndim == 3 else np.atleast_2d(X)
        if X.shape[1] != task.flat_dim:
            raise DimensionError("trajectory width", task.flat_dim, X.shape[1])
        if not np.all(np.isfinite(X)):
            raise NonFiniteInputError("trajectory contains non-finite values")
        modes = np.broadcast_to(np.asarray(modes, dtype=int), (len(X),))
        onehot = np.zeros((len(X), len(task.modes)))
        onehot[np.arange(len(X)), modes] = 1.0
        return np.concatenate([self.scaler_.transform(X), onehot], axis=1)

    def fit(self, X, y, modes=None, scaler=None):
        if self.task is None:
            raise DipsError("TrajectoryDiscriminator needs a task")
        if modes is None:
            raise DipsError("fit needs the mode index of every trajectory")
        X = np.asarray(X, dtype=float)
        flat = X.reshape(len(X), -1)
        if scaler is None:
            scaler = TrajectoryScaler().fit(flat)
        self._init(scaler)
        feats = self._features(flat, modes)
        labels = np.asarray(y, dtype=float).reshape(-1, 1)
        rng = np.random.default_rng(np.random.SeedSequence(self.random_state, spawn_key=(1,)))
        for _ in range(self.steps):
            idx = rng.integers(0, len(feats), size=min(self.batch_size, len(feats)))
            p, cache = neural.forward(self.params_, feats[idx])
            lab = labels[idx]
            eps = 1e-12
            loss = -np.mean(lab * np.log(p + eps) + (1 - lab) * np.log(1 - p + eps))
            grads = neural.backward(self.params_, cache, (p - lab) / len(idx), wrt_logits=True)
            self.params_, self.adam_ = neural.adam_step(self.params_, grads, self.adam_)
            self.loss_curve_.append(float(loss))
        return self

    def realism(self, X, modes) -> np.ndarray:
        """P(real) for each trajectory; a pointwise, deterministic function."""
        check_is_fitted(self, "params_")
        return neural.predict(self.params_, self._features(X, modes))[:, 0]

    def predict_proba(self, X, modes):
        p = self.realism(X, modes)
        return np.stack([1.0 - p, p], axis=1)

    def predict(self, X, modes):
        return (self.realism(X, modes) >= 0.5).astype(int)

    def score(self, X, y, modes=None, sample_weight=None):
        # sklearn's accuracy, with the extra mode argument threaded through
        y = np.asarray(y)
        hit = self.predict(X, modes) == y
        if sample_weight is None:
            return float(hit.mean())
        return float(np.average(hit, weights=sample_weight))

    # -- persistence ----------------------------------------------------------
    def header(self) -> dict:
        check_is_fitted(self, "params_")
        return {
            "model_kind": "discriminator",
            "task": self.task.to_dict(),
            "task_fingerprint": self.task.fingerprint(),
            "normalization": self.scaler_.to_dict(),
            "config": {
                "steps": self.steps,
                "batch_size": self.batch_size,
                "learning_rate": self.learning_rate,
                "random_state": self.random_state,
            },
            "loss_curve": self.loss_curve_,
        }

    def save(self, path):
        return neural.save_checkpoint(path, self.params_, self.header())

    @classmethod
    def load(cls, path, task=None) -> "TrajectoryDiscriminator":
        params, head = neural.load_checkpoint(path)
        if head.get("model_kind") != "discriminator":
            raise DipsError(f"{path} is a {head.get('model_kind')!r} checkpoint, not discriminator")
        if task is not None and task.fingerprint() != head["task_fingerprint"]:
            raise FingerprintError("checkpoint was trained for a different task")
        model = cls(
            task=task_from_dict(head["task"]),
            hidden=tuple(params.sizes[1:-1]),
            activation=params.hidden,
            **head["config"],
        )
        model._init(TrajectoryScaler.from_dict(head["normalization"]))
        model.params_ = params
        model.loss_curve_ = list(head.get("loss_curve", []))
        return model


def diffusion_fakes(dataset: Dataset, diffusion, seed: int = 0) -> np.ndarray:
    """One diffusion sample per dataset entry, conditioned on its (mode, s0)."""
    task = dataset.task
    starts = dataset.trajectories[:, 0, : task.state_dim]
    fakes = np.empty_like(dataset.trajectories)
    for m in range(len(task.modes)):
        idx = np.flatnonzero(dataset.modes == m)
        if len(idx):
            fakes[idx] = diffusion.propose(m, starts[idx], seed=seed * 1000003 + m)
    return fakes


def train_discriminator(dataset: Dataset, diffusion, seed: int = 0, **kw) -> TrajectoryDiscriminator:
    """Fit against an equal number of diffusion samples drawn once up front."""
    if diffusion.task.fingerprint() != dataset.task.fingerprint():
        raise FingerprintError("diffusion model and dataset were built for different tasks")
    fakes = diffusion_fakes(dataset, diffusion, seed)
    X = np.concatenate([dataset.trajectories, fakes])
    y = np.concatenate([np.ones(len(dataset)), np.zeros(len(dataset))])
    modes = np.concatenate([dataset.modes, dataset.modes])
    kw.setdefault("random_state", seed)
    return TrajectoryDiscriminator(task=dataset.task, **kw).fit(X, y, modes=modes, scaler=dataset.scaler)
