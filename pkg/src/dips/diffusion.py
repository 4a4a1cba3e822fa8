"""Conditional denoising diffusion over flattened, normalized trajectories.

The noise predictor sees ``x_in ⊕ mask ⊕ time embedding ⊕ mode one-hot`` where
``x_in`` is the noisy vector with known entries replaced by their clean values.
The last one-hot slot is the null condition used by classifier-free guidance.

The network output ``F`` enters the noise estimate through a fixed skip,
``eps_hat = sqrt(1 - ab_t) x_t + sqrt(ab_t) F`` (``F`` is the usual
"velocity" target).  A plain MLP struggles to reproduce ``x_t`` almost exactly
at high noise, and any slack there is amplified by ``1/sqrt(ab_t)`` when the
sampler recovers ``x_0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import neural
from .core import Dataset, DimensionError, DipsError, FingerprintError, Trajectory, TrajectoryScaler
from .domain import task_from_dict

TIME_EMBED_DIM = 32


class MissingStatisticsError(DipsError):
    """Normalization was requested before statistics were available."""


@dataclass(frozen=True)
class NoiseSchedule:
    n_steps: int = 50
    # the common 1e-4..0.02 range for 1000 steps, rescaled to 50 steps so the
    # last step is close to pure noise
    beta_start: float = 2e-3
    beta_end: float = 0.4

    def __post_init__(self):
        if self.n_steps < 1 or not 0 < self.beta_start <= self.beta_end < 1:
            raise ValueError("need n_steps >= 1 and 0 < beta_start <= beta_end < 1")

    @cached_property
    def betas(self) -> np.ndarray:
        """Index 0 is unused padding so that ``betas[t]`` is step t."""
        return np.concatenate([[0.0], np.linspace(self.beta_start, self.beta_end, self.n_steps)])

    @cached_property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @cached_property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    @cached_property
    def posterior_variance(self) -> np.ndarray:
        ab = self.alpha_bars
        var = np.zeros_like(ab)
        var[1:] = self.betas[1:] * (1.0 - ab[:-1]) / (1.0 - ab[1:])
        return var

    def to_dict(self) -> dict:
        return {"n_steps": self.n_steps, "beta_start": self.beta_start, "beta_end": self.beta_end}


def noising(schedule: NoiseSchedule, x0, t, eps) -> np.ndarray:
    """``sqrt(ab_t) x0 + sqrt(1 - ab_t) eps``; ``t`` may be an array over rows."""
    ab = schedule.alpha_bars[np.asarray(t)]
    if np.ndim(ab):
        ab = ab[:, None]
    return np.sqrt(ab) * np.asarray(x0) + np.sqrt(1.0 - ab) * np.asarray(eps)


def time_embedding(t, dim: int = TIME_EMBED_DIM) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def normalize(scaler, traj) -> np.ndarray:
    if scaler is None or not hasattr(scaler, "mean_"):
        raise MissingStatisticsError("no normalization statistics")
    X = traj.to_array().reshape(-1) if isinstance(traj, Trajectory) else traj
    return scaler.transform(X)


def denormalize(scaler, v) -> np.ndarray:
    if scaler is None or not hasattr(scaler, "mean_"):
        raise MissingStatisticsError("no normalization statistics")
    return scaler.inverse_transform(v)


def masked_mse(pred, target, mask):
    """Mean squared error over entries where ``mask`` is False, and its gradient.

    A mask that covers everything leaves nothing to predict: the loss is 0 and
    the gradient is None.
    """
    unknown = ~np.asarray(mask, dtype=bool)
    count = unknown.sum()
    if count == 0:
        return 0.0, None
    diff = (pred - target) * unknown
    return float(np.sum(diff * diff) / count), 2.0 * diff / count


def sample_streams(seed: int, k: int) -> list[np.random.Generator]:
    """One independent generator per sample index."""
    return [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(j,))) for j in range(k)]


class TrajectoryDiffusion(BaseEstimator):
    """Mode-conditioned trajectory diffusion model with inpainting.

    ``fit`` takes a :class:`~dips.core.Dataset` (or flattened trajectories
    ``X`` with mode indices ``y``) and trains the noise predictor with Adam.
    """

    def __init__(
        self,
        task=None,
        hidden=(256, 256, 256),
        activation="softplus",
        n_diffusion_steps=50,
        beta_start=2e-3,
        beta_end=0.4,
        guidance=1.5,
        cond_dropout=0.1,
        empty_mask_prob=0.5,
        steps=4000,
        batch_size=64,
        learning_rate=1e-3,
        relative_states=True,
        random_state=0,
    ):
        self.task = task
        self.hidden = hidden
        self.activation = activation
        self.n_diffusion_steps = n_diffusion_steps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.guidance = guidance
        self.cond_dropout = cond_dropout
        self.empty_mask_prob = empty_mask_prob
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.relative_states = relative_states
        self.random_state = random_state

    # -- layout ---------------------------------------------------------------
    @property
    def flat_dim(self) -> int:
        return self.task.flat_dim

    @property
    def n_conditions(self) -> int:
        return len(self.task.modes) + 1

    @property
    def null_condition(self) -> int:
        return len(self.task.modes)

    def _input_dim(self) -> int:
        return 2 * self.flat_dim + TIME_EMBED_DIM + self.n_conditions

    def _start_mask(self) -> np.ndarray:
        m = np.zeros(self.flat_dim, dtype=bool)
        m[: self.task.state_dim] = True
        return m

    def encode(self, flat) -> np.ndarray:
        """Model coordinates: with ``relative_states`` the states after the first are stored as offsets from it."""
        flat = np.asarray(flat, dtype=float)
        if not self.relative_states:
            return flat
        X = flat.reshape(len(flat), self.task.horizon, self.task.step_dim).copy()
        d_s = self.task.state_dim
        X[:, 1:, :d_s] -= X[:, :1, :d_s]
        return X.reshape(len(flat), -1)

    def decode(self, flat) -> np.ndarray:
        flat = np.asarray(flat, dtype=float)
        if not self.relative_states:
            return flat
        X = flat.reshape(len(flat), self.task.horizon, self.task.step_dim).copy()
        d_s = self.task.state_dim
        X[:, 1:, :d_s] += X[:, :1, :d_s]
        return X.reshape(len(flat), -1)

    def _net_input(self, x_t, known, mask, t, cond):
        x_in = np.where(mask, known, x_t)
        temb = time_embedding(np.broadcast_to(t, (len(x_t),)))
        onehot = np.zeros((len(x_t), self.n_conditions))
        onehot[np.arange(len(x_t)), cond] = 1.0
        return np.concatenate([x_in, mask.astype(float), temb, onehot], axis=1)

    # -- training -------------------------------------------------------------
    def _init(self, scaler):
        self.schedule_ = NoiseSchedule(self.n_diffusion_steps, self.beta_start, self.beta_end)
        rng = np.random.default_rng(np.random.SeedSequence(self.random_state, spawn_key=(0,)))
        sizes = (self._input_dim(), *self.hidden, self.flat_dim)
        self.params_ = neural.init_mlp(sizes, rng, hidden=self.activation, output="identity")
        self.adam_ = neural.AdamState.for_params(self.params_, self.learning_rate)
        self.scaler_ = scaler
        self.loss_curve_ = []

    def _draw_masks(self, n, rng) -> np.ndarray:
        H, D = self.task.horizon, self.task.step_dim
        masks = np.zeros((n, H, D), dtype=bool)
        filled = rng.random(n) >= self.empty_mask_prob
        # span of whole rows after the first, length uniform in 0..H-1, so the
        # bare first-state pattern used at sampling time is drawn often
        length = rng.integers(0, H, size=n)
        start = 1 + (rng.random(n) * (H - length)).astype(int)
        for i in np.flatnonzero(filled):
            masks[i, 0, : self.task.state_dim] = True
            masks[i, start[i] : start[i] + length[i]] = True
        return masks.reshape(n, -1)

    def train_step(self, x0, modes, rng) -> float:
        """One Adam update on a batch of normalized flat trajectories."""
        x0 = np.asarray(x0, dtype=float)
        modes = np.asarray(modes, dtype=int)
        n = len(x0)
        if n == 0:
            raise DipsError("empty training batch")
        if x0.shape[1] != self.flat_dim:
            raise DimensionError("training batch width", self.flat_dim, x0.shape[1])
        t = rng.integers(1, self.schedule_.n_steps + 1, size=n)
        eps = rng.standard_normal(x0.shape)
        cond = np.where(rng.random(n) < self.cond_dropout, self.null_condition, modes)
        mask = self._draw_masks(n, rng)
        x_t = noising(self.schedule_, x0, t, eps)
        inp = self._net_input(x_t, x0, mask, t, cond)
        out, cache = neural.forward(self.params_, inp)
        a_out, a_x = self._skip(t)
        loss, dpred = masked_mse(a_out * out + a_x * x_t, eps, mask)
        if dpred is not None:
            grads = neural.backward(self.params_, cache, a_out * dpred)
            self.params_, self.adam_ = neural.adam_step(self.params_, grads, self.adam_)
        self.loss_curve_.append(loss)
        return loss

    def fit(self, X, y=None):
        if isinstance(X, Dataset):
            if self.task is None:
                self.task = X.task
            elif self.task.fingerprint() != X.task.fingerprint():
                raise FingerprintError("dataset and model were built for different tasks")
            flat, modes, scaler = X.flat(), X.modes, X.scaler
        else:
            flat = np.asarray(X, dtype=float)
            modes = np.asarray(y, dtype=int)
            scaler = None
        if self.task is None:
            raise DipsError("TrajectoryDiffusion needs a task")
        flat = self.encode(flat)
        # the dataset statistics describe absolute states; offsets need their own
        if scaler is None or self.relative_states:
            scaler = TrajectoryScaler().fit(flat)
        self._init(scaler)
        data = scaler.transform(flat)
        rng = np.random.default_rng(np.random.SeedSequence(self.random_state, spawn_key=(1,)))
        for _ in range(self.steps):
            idx = rng.integers(0, len(data), size=min(self.batch_size, len(data)))
            self.train_step(data[idx], modes[idx], rng)
        return self

    # -- sampling -------------------------------------------------------------
    def _skip(self, t):
        """Coefficients of the network output and of ``x_t`` in the noise estimate."""
        ab = self.schedule_.alpha_bars[np.asarray(t)]
        if np.ndim(ab):
            ab = ab[:, None]
        return np.sqrt(ab), np.sqrt(1.0 - ab)

    def predict_noise(self, x_t, known, mask, t, cond) -> np.ndarray:
        a_out, a_x = self._skip(t)
        out = neural.predict(self.params_, self._net_input(x_t, known, mask, t, cond))
        return a_out * out + a_x * x_t

    def _eps(self, x_t, known, mask, t, cond, guidance):
        eps_c = self.predict_noise(x_t, known, mask, t, cond)
        if guidance == 0:
            return eps_c
        null = np.full_like(cond, self.null_condition)
        eps_u = self.predict_noise(x_t, known, mask, t, null)
        return (1.0 + guidance) * eps_c - guidance * eps_u

    def propose(self, mode, starts, seed: int, guidance=None) -> np.ndarray:
        """Sample one trajectory per row of ``starts``; returns (k, H, step_dim).

        Row ``j`` draws all of its noise from the substream ``(seed, j)`` so a
        sample does not depend on how many others are drawn with it.
        """
        check_is_fitted(self, "params_")
        task = self.task
        starts = np.atleast_2d(np.asarray(starts, dtype=float))
        if starts.shape[1] != task.state_dim:
            raise DimensionError("start state", task.state_dim, starts.shape[1])
        m = mode if isinstance(mode, (int, np.integer)) else task.mode_index(mode)
        w = self.guidance if guidance is None else guidance
        k, F, N = len(starts), self.flat_dim, self.schedule_.n_steps
        sch = self.schedule_
        noise = np.stack([g.standard_normal((N + 1, F)) for g in sample_streams(seed, k)], axis=1)
        mask = np.broadcast_to(self._start_mask(), (k, F))
        known = np.zeros((k, F))
        known[:, : task.state_dim] = (starts - self.scaler_.mean_[: task.state_dim]) / self.scaler_.scale_[
            : task.state_dim
        ]
        cond = np.full(k, int(m))
        x = np.where(mask, known, noise[N])
        for t in range(N, 0, -1):
            eps = self._eps(x, known, mask, t, cond, w)
            mean = (x - sch.betas[t] / np.sqrt(1.0 - sch.alpha_bars[t]) * eps) / np.sqrt(sch.alphas[t])
            x = mean + np.sqrt(sch.posterior_variance[t]) * noise[t - 1] if t > 1 else mean
            x = np.where(mask, known, x)
        out = self.decode(self.scaler_.inverse_transform(x)).reshape(k, task.horizon, task.step_dim)
        out[:, 0, : task.state_dim] = starts
        return out

    def sample(self, c, s0, k: int, seed: int, guidance=None) -> list[Trajectory]:
        starts = np.tile(np.asarray(s0, dtype=float), (k, 1))
        arr = self.propose(c, starts, seed, guidance)
        return [Trajectory.from_array(a, self.task.state_dim) for a in arr]

    # -- persistence ----------------------------------------------------------
    def header(self) -> dict:
        check_is_fitted(self, "params_")
        return {
            "model_kind": "diffusion",
            "task": self.task.to_dict(),
            "task_fingerprint": self.task.fingerprint(),
            "normalization": self.scaler_.to_dict(),
            "schedule": self.schedule_.to_dict(),
            "config": {
                "guidance": self.guidance,
                "cond_dropout": self.cond_dropout,
                "empty_mask_prob": self.empty_mask_prob,
                "steps": self.steps,
                "batch_size": self.batch_size,
                "learning_rate": self.learning_rate,
                "relative_states": self.relative_states,
                "random_state": self.random_state,
            },
            "loss_curve": self.loss_curve_,
        }

    def save(self, path):
        return neural.save_checkpoint(path, self.params_, self.header())

    @classmethod
    def load(cls, path, task=None) -> "TrajectoryDiffusion":
        params, head = neural.load_checkpoint(path)
        if head.get("model_kind") != "diffusion":
            raise DipsError(f"{path} is a {head.get('model_kind')!r} checkpoint, not diffusion")
        file_task = task_from_dict(head["task"])
        if task is not None and task.fingerprint() != head["task_fingerprint"]:
            raise FingerprintError("checkpoint was trained for a different task")
        sch, cfg = head["schedule"], head["config"]
        model = cls(
            task=file_task,
            hidden=tuple(params.sizes[1:-1]),
            activation=params.hidden,
            n_diffusion_steps=sch["n_steps"],
            beta_start=sch["beta_start"],
            beta_end=sch["beta_end"],
            **cfg,
        )
        model._init(TrajectoryScaler.from_dict(head["normalization"]))
        model.params_ = params
        model.loss_curve_ = list(head.get("loss_curve", []))
        return model
