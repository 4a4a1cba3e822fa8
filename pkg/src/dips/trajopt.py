"""Constrained single-mode trajectory optimization.

Augmented-Lagrangian method over the whole (H, d_s + d_u) trajectory with
projected, preconditioned gradient descent as the inner solver.  Equalities use
the quadratic penalty ``lam*h + rho/2*h^2``; inequalities use the smooth PHR
form ``(max(0, mu + rho*g)^2 - mu^2) / (2 rho)``.  Box bounds and finger
workspaces are enforced by projection.

All internals are vectorized over a leading batch axis whose rows are
independent problems (possibly with different modes and start states), which
is how dataset generation solves many demonstrations at once.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .core import DipsError, Trajectory
from .domain import TaskSpec, _perp

EQ_FAMILIES = ("contact", "kinematics", "object", "consistency", "balance", "terminal")
INEQ_FAMILIES = ("friction", "env_force", "clearance")


# keeps the diagonal metric bounded where a variable has no curvature
CURVATURE_FLOOR = 1.0


class OptimizationError(DipsError):
    """Every candidate diverged to non-finite values."""


@dataclass(frozen=True)
class OptConfig:
    outer_iters: int = 8
    inner_steps: int = 50
    step_size: float = 1e-2
    max_halvings: int = 20
    rho0: float = 10.0
    rho_growth: float = 2.0
    tol: float = 1e-3
    w_goal: float = 100.0
    w_regrasp: float = 50.0
    w_smooth: float = 1.0
    w_force: float = 0.1
    # extra clearance the optimizer keeps above delta so rollouts stay feasible
    clearance_margin: float = 0.002

    def __post_init__(self):
        for name in ("step_size", "rho0", "tol", "w_goal", "w_regrasp", "w_smooth", "w_force"):
            if not getattr(self, name) > 0:
                raise ValueError(f"OptConfig.{name} must be positive")
        if self.outer_iters < 1 or self.inner_steps < 1 or self.rho_growth < 1:
            raise ValueError("OptConfig iteration counts must be >= 1 and rho_growth >= 1")

    def high_budget(self) -> "OptConfig":
        return replace(self, outer_iters=2 * self.outer_iters)


@dataclass
class PartitionedTrajectory:
    """Contact-finger, regrasp-finger and object parts of one trajectory."""

    contact: np.ndarray  # finger indices with c_i = 1
    regrasp: np.ndarray  # finger indices with c_i = 0
    q_c: np.ndarray
    dq_c: np.ndarray
    f_c: np.ndarray
    q_r: np.ndarray
    dq_r: np.ndarray
    f_r: np.ndarray  # identically zero on well-formed trajectories
    obj: np.ndarray
    env_force: np.ndarray


def _as_mode(task: TaskSpec, c) -> int:
    if isinstance(c, (int, np.integer)):
        return int(c)
    return task.mode_index(c)


def partition(task: TaskSpec, traj: Trajectory, c) -> PartitionedTrajectory:
    X = traj.to_array()
    m = task.mode_array[_as_mode(task, c)].astype(bool)
    ci, ri = np.flatnonzero(m), np.flatnonzero(~m)
    Q, DQ, F = X[:, task.q_idx], X[:, task.dq_idx], X[:, task.f_idx]
    return PartitionedTrajectory(
        ci, ri, Q[:, ci], DQ[:, ci], F[:, ci], Q[:, ri], DQ[:, ri], F[:, ri],
        X[:, task.o_idx], X[:, task.e_idx],
    )


def reassemble(task: TaskSpec, part: PartitionedTrajectory) -> Trajectory:
    H = part.obj.shape[0]
    X = np.zeros((H, task.step_dim))
    for idx, src_c, src_r in (
        (task.q_idx, part.q_c, part.q_r),
        (task.dq_idx, part.dq_c, part.dq_r),
        (task.f_idx, part.f_c, part.f_r),
    ):
        X[:, idx[part.contact]] = src_c
        X[:, idx[part.regrasp]] = src_r
    X[:, task.o_idx] = part.obj
    X[:, task.e_idx] = part.env_force
    return Trajectory.from_array(X, task.state_dim)


class _Residuals:
    """Cost and constraint residuals of a batch of trajectories.

    ``X`` is (B, H, step_dim), ``C`` the (B, n_f) contact flags and ``goal`` the
    (B, obj_dim) mode displacements.  Inactive entries are zeroed so that every
    family has a fixed shape across the batch; ``active`` marks the rest.
    """

    def __init__(self, task: TaskSpec, X, C, goal, cfg: OptConfig, delta: float):
        self.task, self.cfg = task, cfg
        self.X = X
        self.Cb = C[:, None, :]
        self.Rg = 1.0 - self.Cb
        self.Q = X[..., task.q_idx]
        self.O = X[..., task.o_idx]
        self.DQ = X[..., task.dq_idx]
        self.F = X[..., task.f_idx]
        self.FE = X[..., task.e_idx]
        Cb, Rg = self.Cb, self.Rg

        self.r, self.Jq, self.Jo = task.local_point_jac(self.Q, self.O[:, :, None, :])
        r = self.r

        # cost terms
        self.e_goal = self.O[:, -1] - (self.O[:, 0] + goal)
        self.tgt, self.dtgt = task.target_points(self.O[:, -1])
        self.e_reg = (self.Q[:, -1] - self.tgt) * Rg[:, 0, :, None]
        self.cost_terms = {
            "goal": cfg.w_goal * np.sum(self.e_goal**2, axis=1),
            "regrasp": cfg.w_regrasp * np.sum(self.e_reg**2, axis=(1, 2)),
            "smooth": cfg.w_smooth * np.sum(self.DQ**2, axis=(1, 2, 3)),
            "force": cfg.w_force
            * (np.sum(self.F**2, axis=(1, 2, 3)) + np.sum(self.FE**2, axis=(1, 2))),
        }
        self.cost = sum(self.cost_terms.values())

        # equalities
        self.sd, self.dsd = task.sd_local(r)
        kin, self.kda, self.kdb = task.kin_local(r[:, :-1], r[:, 1:])
        Fc = self.F * Cb[..., None]
        torque = np.sum(r[..., 0] * Fc[..., 1] - r[..., 1] * Fc[..., 0], axis=2)
        torque = torque + self.FE[..., task.torque_env_index]
        if task.has_force_balance:
            force = Fc.sum(axis=2) + self.FE[..., :2]
            balance = np.concatenate([force, torque[..., None]], axis=-1)
        else:
            balance = torque[..., None]
        self.lock = task.object_lock(C)[:, None, :]
        self.eq = {
            "contact": self.sd * Cb,
            "kinematics": kin * Cb[..., None],
            "object": (self.O[:, 1:] - self.O[:, :-1]) * self.lock,
            "consistency": self.Q[:, :-1] + self.DQ[:, :-1] - self.Q[:, 1:],
            "balance": balance,
            "terminal": self.sd[:, -1] * Rg[:, 0],
        }

        # inequalities
        self.n, self.dn = task.normal_local(r)
        self.fn = -np.sum(self.F * self.n, axis=-1)
        self.ft = np.sum(self.F * _perp(self.n), axis=-1)
        fric = np.stack([np.abs(self.ft) - task.mu * self.fn, -self.fn], axis=-1)
        self.env_sl = slice(0, 2) if task.has_force_balance else slice(0, 1)
        fe = self.FE[..., self.env_sl]
        self.fe_norm = np.sqrt(np.sum(fe**2, axis=-1))
        self.ineq = {
            "friction": fric * Cb[..., None],
            "env_force": self.fe_norm - task.env_force_max,
            "clearance": (delta - self.sd[:, 1:-1]) * Rg,
        }

    def active(self):
        B, H = self.X.shape[:2]
        Cb = np.broadcast_to(self.Cb, (B, H, self.Cb.shape[2])).astype(bool)
        Rg = ~Cb
        k = self.eq["kinematics"].shape[-1]
        eq = {
            "contact": Cb,
            "kinematics": np.repeat(Cb[:, :-1, :, None], k, axis=-1),
            "object": np.broadcast_to(self.lock, self.eq["object"].shape).astype(bool),
            "consistency": np.ones(self.eq["consistency"].shape, bool),
            "balance": np.ones(self.eq["balance"].shape, bool),
            "terminal": Rg[:, 0],
        }
        ineq = {
            "friction": np.repeat(Cb[..., None], 2, axis=-1),
            "env_force": np.ones(self.ineq["env_force"].shape, bool),
            "clearance": Rg[:, 1:-1],
        }
        return eq, ineq

    def gradient(self, cost_scale: float, w_eq: dict, w_ineq: dict) -> np.ndarray:
        """Gradient of ``cost_scale*J + sum w_eq.h + sum w_ineq.g`` w.r.t. X."""
        task, cfg = self.task, self.cfg
        Cb, Rg = self.Cb, self.Rg
        gQ = np.zeros_like(self.Q)
        gO = np.zeros_like(self.O)
        gDQ = np.zeros_like(self.DQ)
        gF = np.zeros_like(self.F)
        gFE = np.zeros_like(self.FE)
        gR = np.zeros_like(self.r)

        if cost_scale:
            ge = 2.0 * cfg.w_goal * cost_scale * self.e_goal
            gO[:, -1] += ge
            gO[:, 0] -= ge
            gr = 2.0 * cfg.w_regrasp * cost_scale * self.e_reg
            gQ[:, -1] += gr
            gO[:, -1] -= np.einsum("bfj,bfjk->bk", gr, self.dtgt)
            gDQ += 2.0 * cfg.w_smooth * cost_scale * self.DQ
            gF += 2.0 * cfg.w_force * cost_scale * self.F
            gFE += 2.0 * cfg.w_force * cost_scale * self.FE

        w = w_eq.get("contact")
        if w is not None:
            gR += (w * Cb)[..., None] * self.dsd
        w = w_eq.get("terminal")
        if w is not None:
            gR[:, -1] += (w * Rg[:, 0])[..., None] * self.dsd[:, -1]
        w = w_ineq.get("clearance")
        if w is not None:
            gR[:, 1:-1] -= (w * Rg)[..., None] * self.dsd[:, 1:-1]
        w = w_eq.get("kinematics")
        if w is not None:
            wv = w * Cb[..., None]
            gR[:, :-1] += np.einsum("bhfm,bhfmj->bhfj", wv, self.kda)
            gR[:, 1:] += np.einsum("bhfm,bhfmj->bhfj", wv, self.kdb)
        w = w_eq.get("object")
        if w is not None:
            wl = w * self.lock
            gO[:, 1:] += wl
            gO[:, :-1] -= wl
        w = w_eq.get("consistency")
        if w is not None:
            gQ[:, :-1] += w
            gDQ[:, :-1] += w
            gQ[:, 1:] -= w
        w = w_eq.get("balance")
        if w is not None:
            wt = w[..., -1]
            if task.has_force_balance:
                wf = w[..., :2]
                gF += Cb[..., None] * wf[:, :, None, :]
                gFE[..., :2] += wf
            gFE[..., task.torque_env_index] += wt
            wtc = wt[..., None] * Cb  # (B, H, nf)
            F, r = self.F, self.r
            gR += wtc[..., None] * np.stack([F[..., 1], -F[..., 0]], axis=-1)
            gF += wtc[..., None] * np.stack([-r[..., 1], r[..., 0]], axis=-1)
        w = w_ineq.get("friction")
        if w is not None:
            wa = w[..., 0] * Cb
            wb = w[..., 1] * Cb
            cfn = -task.mu * wa - wb
            cft = np.sign(self.ft) * wa
            n, F = self.n, self.F
            gF += -cfn[..., None] * n + cft[..., None] * _perp(n)
            gn = -cfn[..., None] * F + cft[..., None] * np.stack([F[..., 1], -F[..., 0]], axis=-1)
            gR += np.einsum("bhfi,bhfij->bhfj", gn, self.dn)
        w = w_ineq.get("env_force")
        if w is not None:
            fe = self.FE[..., self.env_sl]
            nrm = np.where(self.fe_norm > 0, self.fe_norm, 1.0)
            gFE[..., self.env_sl] += (w / nrm)[..., None] * fe * (self.fe_norm > 0)[..., None]

        gQ += np.einsum("bhfj,bhfjk->bhfk", gR, self.Jq)
        gO += np.einsum("bhfj,bhfjk->bhk", gR, self.Jo)
        G = np.zeros_like(self.X)
        G[..., task.q_idx] = gQ
        G[..., task.o_idx] = gO
        G[..., task.dq_idx] = gDQ
        G[..., task.f_idx] = gF
        G[..., task.e_idx] = gFE
        return G


    def curvature(self, rho: float, active_ineq: dict) -> np.ndarray:
        """Diagonal of the Gauss-Newton Hessian of the penalty objective.

        Each residual contributes ``rho * (dh/dx_i)^2`` to variable ``i``;
        inequalities count only where ``active_ineq`` is set.  Second-order
        terms of the geometry (and the dependence of friction on the contact
        normal) are dropped.
        """
        task, cfg = self.task, self.cfg
        Cb, Rg = self.Cb, self.Rg
        dQ = np.zeros_like(self.Q)
        dO = np.zeros_like(self.O)
        dDQ = np.zeros_like(self.DQ)
        dF = np.zeros_like(self.F)
        dFE = np.zeros_like(self.FE)

        def through_r(rows, coef, t=slice(None)):
            # coef (..., 2): d(residual)/d(local point) for residuals at time slice t
            gq = np.einsum("bhfj,bhfjk->bhfk", coef, self.Jq[:, t])
            go = np.einsum("bhfj,bhfjk->bhfk", coef, self.Jo[:, t])
            dQ[:, t] += rows[..., None] * gq**2
            dO[:, t] += np.sum(rows[..., None] * go**2, axis=2)

        through_r(Cb * np.ones_like(self.sd), self.dsd)
        term = np.zeros_like(self.sd)
        term[:, -1] = Rg[:, 0]
        through_r(term, self.dsd)
        act = active_ineq["clearance"] * Rg
        through_r(act, self.dsd[:, 1:-1], slice(1, -1))
        ones = np.broadcast_to(Cb, self.sd[:, :-1].shape)
        for m in range(self.kda.shape[-2]):
            through_r(ones, self.kda[..., m, :], slice(0, -1))
            through_r(ones, self.kdb[..., m, :], slice(1, None))
        dO[:, 1:] += self.lock
        dO[:, :-1] += self.lock
        dQ[:, :-1] += 1.0
        dDQ[:, :-1] += 1.0
        dQ[:, 1:] += 1.0
        # balance
        if task.has_force_balance:
            dF += Cb[..., None]
            dFE[..., :2] += 1.0
        dF += Cb[..., None] * self.r[..., ::-1] ** 2
        dFE[..., task.torque_env_index] += 1.0
        # friction
        dF += (active_ineq["friction"] * Cb[..., None]).max(axis=-1)[..., None] * (1.0 + task.mu**2)
        dFE[..., self.env_sl] += active_ineq["env_force"][..., None]

        cost = np.zeros_like(self.X)
        cq = np.zeros_like(self.Q)
        cq[:, -1] = 2.0 * cfg.w_regrasp * Rg[:, 0, :, None]
        co = np.zeros_like(self.O)
        co[:, -1] = 2.0 * cfg.w_goal
        co[:, 0] = 2.0 * cfg.w_goal
        cost[..., task.q_idx] = cq
        cost[..., task.o_idx] = co
        cost[..., task.dq_idx] = 2.0 * cfg.w_smooth
        cost[..., task.f_idx] = 2.0 * cfg.w_force
        cost[..., task.e_idx] = 2.0 * cfg.w_force
        D = np.zeros_like(self.X)
        D[..., task.q_idx] = dQ
        D[..., task.o_idx] = dO
        D[..., task.dq_idx] = dDQ
        D[..., task.f_idx] = dF
        D[..., task.e_idx] = dFE
        return rho * D + cost


def _batch_inputs(task, X, modes, goals):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    modes = np.atleast_1d(np.asarray(modes, dtype=int))
    C = task.mode_array[modes]
    if goals is None:
        goals = np.asarray(task.mode_goals, dtype=float)[modes]
    goals = np.asarray(goals, dtype=float).reshape(len(modes), task.obj_dim)
    return X, C, goals


def total_cost(task: TaskSpec, traj, c, mode_goal=None, cfg: OptConfig = OptConfig()) -> float:
    """Goal, regrasp-target, smoothness and force-magnitude cost of one trajectory."""
    X = traj.to_array() if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    m = _as_mode(task, c)
    goal = None if mode_goal is None else getattr(mode_goal, "displacement", mode_goal)
    X, C, goals = _batch_inputs(task, X, [m], goal)
    return float(_Residuals(task, X, C, goals, cfg, task.delta).cost[0])


def batch_total_cost(task: TaskSpec, X, modes, goals=None, cfg: OptConfig = OptConfig()):
    X, C, goals = _batch_inputs(task, X, modes, goals)
    return _Residuals(task, X, C, goals, cfg, task.delta).cost


def total_cost_grad(task: TaskSpec, X, c, mode_goal=None, cfg: OptConfig = OptConfig()):
    m = _as_mode(task, c)
    goal = None if mode_goal is None else getattr(mode_goal, "displacement", mode_goal)
    Xb, C, goals = _batch_inputs(task, X, [m], goal)
    return _Residuals(task, Xb, C, goals, cfg, task.delta).gradient(1.0, {}, {})[0]


def _bound_residuals(task: TaskSpec, X):
    """Per-step finger workspace and control-box inequalities, (H, n)."""
    Q = X[..., task.q_idx]
    ws = task.workspace_residual(Q).reshape(X.shape[0], -1)
    lo, hi = task.u_bounds
    U = X[..., task.state_dim :]
    return np.concatenate([ws, U - hi, lo - U], axis=-1)


def constraint_residuals(task: TaskSpec, traj, c, delta: float | None = None):
    """Active equality and inequality residuals of one trajectory.

    Equalities are ordered contact, sticking kinematics, locked object
    coordinates, contact-finger consistency, balance, terminal regrasp
    contact, regrasp-finger consistency.  Inequalities are ordered bounds,
    friction, environment force, regrasp clearance.  Returns ``(eq, ineq)`` as
    flat arrays.
    """
    X = traj.to_array() if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    m = _as_mode(task, c)
    delta = task.delta if delta is None else delta
    Xb, C, goals = _batch_inputs(task, X, [m], None)
    res = _Residuals(task, Xb, C, goals, OptConfig(), delta)
    act_eq, act_ineq = res.active()
    cmask = task.mode_array[m].astype(bool)
    cons = res.eq["consistency"][0]
    eq = np.concatenate(
        [
            res.eq["contact"][0][act_eq["contact"][0]],
            res.eq["kinematics"][0][act_eq["kinematics"][0]],
            res.eq["object"][0][act_eq["object"][0]],
            cons[:, cmask].reshape(-1),
            res.eq["balance"][0].reshape(-1),
            res.eq["terminal"][0][act_eq["terminal"][0]],
            cons[:, ~cmask].reshape(-1),
        ]
    )
    ineq = np.concatenate(
        [
            _bound_residuals(task, X).reshape(-1),
            res.ineq["friction"][0][act_ineq["friction"][0]],
            res.ineq["env_force"][0].reshape(-1),
            res.ineq["clearance"][0][act_ineq["clearance"][0]],
        ]
    )
    return eq, ineq


def max_violation(task: TaskSpec, traj, c, delta=None) -> tuple[float, float]:
    eq, ineq = constraint_residuals(task, traj, c, delta)
    return (float(np.max(np.abs(eq))) if eq.size else 0.0), (
        float(np.max(ineq)) if ineq.size else -np.inf
    )


class _Problem:
    def __init__(self, task, s0, modes, goals, cfg, delta=None):
        self.task, self.cfg = task, cfg
        self.s0 = np.asarray(s0, dtype=float)
        self.modes = np.asarray(modes, dtype=int)
        self.C = task.mode_array[self.modes]
        self.goals = goals
        self.delta = task.delta + cfg.clearance_margin if delta is None else delta
        B, H, D = len(self.modes), task.horizon, task.step_dim
        free = np.ones((B, H, D))
        free[:, 0, : task.state_dim] = 0.0
        fmask = np.repeat((1.0 - self.C)[:, :, None], 2, axis=2)
        free[:, :, task.f_idx] *= 1.0 - fmask[:, None]
        self.free = free

    def project(self, X):
        task = self.task
        X = X.copy()
        X[:, 0, : task.state_dim] = self.s0
        X[..., task.q_idx] = task.clip_fingers(X[..., task.q_idx])
        lo, hi = task.u_bounds
        X[..., task.state_dim :] = np.clip(X[..., task.state_dim :], lo, hi)
        X[..., task.f_idx] *= self.C[:, None, :, None]
        return X

    def residuals(self, X, delta=None):
        return _Residuals(
            self.task, X, self.C, self.goals, self.cfg, self.delta if delta is None else delta
        )

    def penalty(self, res, lam, mu, rho):
        P = res.cost.copy()
        for k, h in res.eq.items():
            P += np.sum((lam[k] * h + 0.5 * rho * h * h).reshape(len(P), -1), axis=1)
        for k, g in res.ineq.items():
            a = np.maximum(0.0, mu[k] + rho * g)
            P += np.sum(((a * a - mu[k] ** 2) / (2.0 * rho)).reshape(len(P), -1), axis=1)
        return P

    def penalty_grad(self, res, lam, mu, rho):
        w_eq = {k: lam[k] + rho * h for k, h in res.eq.items()}
        w_in = {k: np.maximum(0.0, mu[k] + rho * g) for k, g in res.ineq.items()}
        return res.gradient(1.0, w_eq, w_in)


def _zeros_like(d):
    return {k: np.zeros_like(v) for k, v in d.items()}


def penalty_objective(task, X, c, lam=None, mu=None, rho=10.0, cfg=OptConfig(), goal=None):
    """Augmented-Lagrangian objective and its gradient for one trajectory.

    ``lam`` and ``mu`` are per-family multiplier dicts shaped like the solver's
    residuals; ``None`` means zero multipliers.
    """
    m = _as_mode(task, c)
    Xb, C, goals = _batch_inputs(task, X, [m], goal)
    prob = _Problem(task, Xb[:, 0, : task.state_dim], [m], goals, cfg)
    res = prob.residuals(Xb)
    lam = _zeros_like(res.eq) if lam is None else lam
    mu = _zeros_like(res.ineq) if mu is None else mu
    return float(prob.penalty(res, lam, mu, rho)[0]), prob.penalty_grad(res, lam, mu, rho)[0]


def _violations(res, act_eq, act_ineq):
    B = res.X.shape[0]
    eq = np.zeros(B)
    for k, h in res.eq.items():
        eq = np.maximum(eq, np.max(np.abs(h * act_eq[k]).reshape(B, -1), axis=1))
    ineq = np.zeros(B)
    for k, g in res.ineq.items():
        gm = np.where(act_ineq[k], g, -np.inf).reshape(B, -1)
        ineq = np.maximum(ineq, np.max(gm, axis=1, initial=-np.inf))
    return eq, ineq


def solve_batch(task: TaskSpec, X0, s0, modes, goals=None, cfg: OptConfig = OptConfig()):
    """Run the augmented-Lagrangian method on B independent problems.

    Returns ``(X, info)`` where ``info`` holds per-row arrays ``cost``,
    ``eq_max``, ``ineq_max``, ``failed`` and curves per outer iteration.
    """
    X0, C, goals = _batch_inputs(task, X0, modes, goals)
    s0 = np.broadcast_to(np.asarray(s0, dtype=float), (len(X0), task.state_dim))
    prob = _Problem(task, s0, np.atleast_1d(modes), goals, cfg)
    B = len(X0)
    X = prob.project(X0)
    res = prob.residuals(X)
    lam = _zeros_like(res.eq)
    mu = _zeros_like(res.ineq)
    rho = cfg.rho0
    eta = np.full(B, cfg.step_size)
    failed = ~np.isfinite(res.cost)
    cost_curve, resid_curve = [], []
    iters = 0
    for _ in range(cfg.outer_iters):
        # diagonal Gauss-Newton metric, scaled so that a full step
        # (the configured step size) is one full diagonal Newton step
        res = prob.residuals(X)
        act = {k: (mu[k] + rho * g) > 0 for k, g in res.ineq.items()}
        M = 1.0 / (res.curvature(rho, act) + CURVATURE_FLOOR) / cfg.step_size
        for _ in range(cfg.inner_steps):
            iters += 1
            res = prob.residuals(X)
            P = prob.penalty(res, lam, mu, rho)
            G = prob.penalty_grad(res, lam, mu, rho) * prob.free
            bad = ~np.isfinite(P) | ~np.all(np.isfinite(G), axis=(1, 2))
            failed |= bad
            G[failed] = 0.0
            todo = ~failed
            step = np.where(todo, np.minimum(2.0 * eta, cfg.step_size), 0.0)
            Xn = X.copy()
            for _ in range(cfg.max_halvings + 1):
                if not todo.any():
                    break
                trial = prob.project(X - step[:, None, None] * M * G)
                d = trial - X
                Pt = prob.penalty(prob.residuals(trial), lam, mu, rho)
                bound = (
                    P
                    + np.sum(G * d, axis=(1, 2))
                    + np.sum(d * d / M, axis=(1, 2)) / (2.0 * np.maximum(step, 1e-300))
                )
                ok = todo & np.isfinite(Pt) & (Pt <= P) & (Pt <= bound)
                Xn[ok] = trial[ok]
                eta[ok] = step[ok]
                todo &= ~ok
                step = np.where(todo, 0.5 * step, step)
            eta[todo] = step[todo]
            X = Xn
        res = prob.residuals(X)
        for k, h in res.eq.items():
            lam[k] = lam[k] + rho * h
        for k, g in res.ineq.items():
            mu[k] = np.maximum(0.0, mu[k] + rho * g)
        rho *= cfg.rho_growth
        act_eq, act_ineq = res.active()
        eq_v, in_v = _violations(res, act_eq, act_ineq)
        cost_curve.append(res.cost.copy())
        resid_curve.append(np.maximum(eq_v, in_v))
    final = prob.residuals(X, delta=task.delta)
    act_eq, act_ineq = final.active()
    eq_v, in_v = _violations(final, act_eq, act_ineq)
    failed |= ~np.isfinite(final.cost)
    info = {
        "cost": final.cost,
        "eq_max": eq_v,
        "ineq_max": in_v,
        "failed": failed,
        "iterations": iters,
        "cost_curve": np.stack(cost_curve, axis=1),
        "residual_curve": np.stack(resid_curve, axis=1),
    }
    return X, info


@dataclass
class OptReport:
    cost: float
    max_residual: float
    eq_residual: float
    ineq_residual: float
    iterations: int
    feasible: bool
    chosen: int
    wall_time: float
    cost_curve: list = field(default_factory=list)
    residual_curve: list = field(default_factory=list)

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "cost": self.cost,
            "max_residual": self.max_residual,
            "eq_residual": self.eq_residual,
            "ineq_residual": self.ineq_residual,
            "iterations": self.iterations,
            "feasible": self.feasible,
            "chosen": self.chosen,
            "cost_curve": self.cost_curve,
            "residual_curve": self.residual_curve,
        }
        d["wall_time"] = self.wall_time if timing else 0.0
        return d


def optimize(task: TaskSpec, s0, c, mode_goal=None, inits=None, cfg: OptConfig = OptConfig(), rng=None):
    """Optimize one mode segment from each initialization and keep the best.

    The first state of every initialization is overwritten with ``s0``.  Among
    candidates whose constraint violation is within ``cfg.tol`` the lowest
    cost wins; otherwise the least-violating one.
    """
    t0 = time.perf_counter()
    m = _as_mode(task, c)
    if inits is None or len(inits) == 0:
        raise ValueError("optimize needs at least one initialization")
    X0 = np.stack(
        [t.to_array() if isinstance(t, Trajectory) else np.asarray(t, dtype=float) for t in inits]
    )
    goal = None if mode_goal is None else getattr(mode_goal, "displacement", mode_goal)
    goals = None if goal is None else np.tile(np.asarray(goal, dtype=float), (len(X0), 1))
    X, info = solve_batch(task, X0, s0, np.full(len(X0), m), goals, cfg)
    if info["failed"].all():
        raise OptimizationError("all initializations produced non-finite cost or gradient")
    viol = np.maximum(info["eq_max"], np.maximum(info["ineq_max"], 0.0))
    feasible = (viol <= cfg.tol) & ~info["failed"]
    idx = np.arange(len(X))
    if feasible.any():
        order = np.lexsort((idx, info["cost"]))
        best = int(order[feasible[order]][0])
    else:
        v = np.where(info["failed"], np.inf, viol)
        best = int(np.lexsort((idx, v))[0])
    report = OptReport(
        cost=float(info["cost"][best]),
        max_residual=float(viol[best]),
        eq_residual=float(info["eq_max"][best]),
        ineq_residual=float(info["ineq_max"][best]),
        iterations=int(info["iterations"]),
        feasible=bool(feasible[best]),
        chosen=best,
        wall_time=time.perf_counter() - t0,
        cost_curve=info["cost_curve"][best].tolist(),
        residual_curve=info["residual_curve"][best].tolist(),
    )
    return Trajectory.from_array(X[best], task.state_dim), report
