"""Two planar quasi-static toy tasks: sliding a card and turning a pinned rotor.

State rows are ``[q_1, ..., q_nf, o]`` (each finger a 2-D point) and control
rows are ``[dq_1, f_1, ..., dq_nf, f_nf, f_e]``.  Finger forces and the
environment force are expressed in the object frame.

Geometry is written against object-frame ("local") contact points so that the
trajectory optimizer can chain derivatives through a single Jacobian.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from functools import cached_property

import numpy as np

from .core import ContactMode, DimensionError, DipsError

_WS_TOL = 1e-12


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return c, s


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _perp(v):
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


@dataclass(frozen=True)
class ModeGoal:
    """Object displacement the optimizer aims for during one mode."""

    displacement: tuple[float, ...]


@dataclass(frozen=True, kw_only=True)
class TaskSpec:
    name: str
    n_fingers: int
    obj_dim: int
    env_dim: int
    max_modes: int
    modes: tuple[ContactMode, ...]
    mode_names: tuple[str, ...]
    mode_goals: tuple[tuple[float, ...], ...]
    prior_init: tuple[float, ...]
    prior_trans: tuple[tuple[float, ...], ...]
    horizon: int = 8
    mu: float = 0.5
    env_force_max: float = 2.0
    delta: float = 0.015
    dq_max: float = 0.02
    force_max: float = 5.0
    p_min: float = 0.1
    goal_threshold: float = 0.005

    # -- layout ---------------------------------------------------------
    @property
    def state_dim(self) -> int:
        return 2 * self.n_fingers + self.obj_dim

    @property
    def control_dim(self) -> int:
        return 4 * self.n_fingers + self.env_dim

    @property
    def step_dim(self) -> int:
        return self.state_dim + self.control_dim

    @property
    def flat_dim(self) -> int:
        return self.horizon * self.step_dim

    @cached_property
    def q_idx(self) -> np.ndarray:
        return np.arange(2 * self.n_fingers).reshape(self.n_fingers, 2)

    @cached_property
    def o_idx(self) -> np.ndarray:
        return np.arange(2 * self.n_fingers, self.state_dim)

    @cached_property
    def dq_idx(self) -> np.ndarray:
        base = self.state_dim + 4 * np.arange(self.n_fingers)
        return np.stack([base, base + 1], axis=1)

    @cached_property
    def f_idx(self) -> np.ndarray:
        return self.dq_idx + 2

    @cached_property
    def e_idx(self) -> np.ndarray:
        return np.arange(self.state_dim + 4 * self.n_fingers, self.step_dim)

    @cached_property
    def mode_array(self) -> np.ndarray:
        return np.asarray(self.modes, dtype=float)

    def fingers(self, s) -> np.ndarray:
        return np.asarray(s)[..., self.q_idx]

    def obj(self, s) -> np.ndarray:
        return np.asarray(s)[..., self.o_idx]

    def make_state(self, fingers, obj) -> np.ndarray:
        fingers = np.asarray(fingers, dtype=float).reshape(self.n_fingers * 2)
        return np.concatenate([fingers, np.atleast_1d(np.asarray(obj, dtype=float))])

    def mode_index(self, c) -> int:
        c = tuple(int(v) for v in c)
        if len(c) != self.n_fingers:
            raise DimensionError("contact mode length", self.n_fingers, len(c))
        try:
            return self.modes.index(c)
        except ValueError:
            raise DipsError(f"{c} is not a mode of the {self.name} task") from None

    def mode_goal(self, m: int) -> ModeGoal:
        return ModeGoal(self.mode_goals[m])

    # -- bounds ----------------------------------------------------------
    @cached_property
    def u_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        hi = np.full(self.control_dim, self.force_max)
        dq = self.dq_idx - self.state_dim
        hi[dq.ravel()] = self.dq_max
        return -hi, hi

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.name
        return json.loads(json.dumps(d))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- geometry (task specific) ----------------------------------------
    def local_point(self, q, o):
        return self.local_point_jac(q, o)[0]

    def signed_distance(self, q, o):
        return self.sd_local(self.local_point(q, o))[0]

    def object_lock(self, C) -> np.ndarray:
        """1 for object coordinates a contact set cannot move, per row of ``C``."""
        C = np.asarray(C, dtype=float)
        n = C.sum(axis=-1, keepdims=True)
        lock = np.broadcast_to((n == 0).astype(float), C.shape[:-1] + (self.obj_dim,)).copy()
        if self.name == "card":
            lock[..., 2] = (n[..., 0] <= 1).astype(float)
        return lock

    def in_workspace(self, Q, which=None) -> np.ndarray:
        Q = np.asarray(Q, dtype=float)
        return np.all(np.abs(self.clip_fingers(Q, which) - Q) <= _WS_TOL, axis=(-1, -2))


@dataclass(frozen=True, kw_only=True)
class CardTask(TaskSpec):
    """Card of width w and height h; fingers push on its top edge (local y = h/2)."""

    width: float = 0.09
    height: float = 0.06
    targets: tuple[float, ...] = (-0.02, 0.02)
    box_lo: tuple[tuple[float, float], ...] = ((-0.045, -0.075), (-0.005, -0.075))
    box_hi: tuple[tuple[float, float], ...] = ((0.005, 0.06), (0.045, 0.06))
    overall_goal: float = -0.06
    init_jitter: float = 0.005

    has_force_balance = True
    torque_env_index = 2

    def local_point_jac(self, q, o):
        q = np.asarray(q, dtype=float)
        o = np.asarray(o, dtype=float)
        c, s = _rot(o[..., 2])
        dx = q[..., 0] - o[..., 0]
        dy = q[..., 1] - o[..., 1]
        rx = c * dx + s * dy
        ry = -s * dx + c * dy
        c, s = np.broadcast_to(c, rx.shape), np.broadcast_to(s, rx.shape)
        r = np.stack([rx, ry], axis=-1)
        Rt = np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], -2)
        dr_do = np.concatenate([-Rt, np.stack([ry, -rx], -1)[..., None]], axis=-1)
        return r, Rt, dr_do

    def world_point(self, r, o):
        r = np.asarray(r, dtype=float)
        o = np.asarray(o, dtype=float)
        c, s = _rot(o[..., 2])
        return np.stack(
            [o[..., 0] + c * r[..., 0] - s * r[..., 1], o[..., 1] + s * r[..., 0] + c * r[..., 1]],
            axis=-1,
        )

    def sd_local(self, r):
        r = np.asarray(r, dtype=float)
        grad = np.zeros_like(r)
        grad[..., 1] = 1.0
        return r[..., 1] - 0.5 * self.height, grad

    def normal_local(self, r):
        r = np.asarray(r, dtype=float)
        n = np.zeros_like(r)
        n[..., 1] = 1.0
        return n, np.zeros(r.shape + (2,))

    def kin_local(self, ra, rb):
        eye = np.broadcast_to(np.eye(2), ra.shape + (2,))
        return ra - rb, eye, -eye

    @property
    def kin_dim(self) -> int:
        return 2

    def target_points(self, o):
        """World-frame regrasp targets on the top edge, with d/do."""
        o = np.asarray(o, dtype=float)
        a = np.asarray(self.targets)
        r = np.stack([a, np.full_like(a, 0.5 * self.height)], axis=-1)
        obj = o[..., None, :]
        pts = self.world_point(r, obj)
        c, s = _rot(obj[..., 2])
        dth = np.stack([-s * r[:, 0] - c * r[:, 1], c * r[:, 0] - s * r[:, 1]], axis=-1)
        eye = np.broadcast_to(np.eye(2), pts.shape + (2,))
        jac = np.concatenate([eye, dth[..., None]], axis=-1)
        return pts, jac

    @cached_property
    def q_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.box_lo, dtype=float), np.asarray(self.box_hi, dtype=float)

    def clip_fingers(self, Q, which=None):
        lo, hi = self.q_bounds
        if which is not None:
            lo, hi = lo[which], hi[which]
        return np.clip(Q, lo, hi)

    def workspace_residual(self, Q):
        lo, hi = self.q_bounds
        return np.concatenate([Q - hi, lo - Q], axis=-1)


    def initial_state(self, rng=None) -> np.ndarray:
        a = np.asarray(self.targets, dtype=float)
        if rng is not None:
            a = a + rng.uniform(-self.init_jitter, self.init_jitter, size=a.shape)
        o = np.zeros(3)
        r = np.stack([a, np.full_like(a, 0.5 * self.height)], axis=-1)
        return self.make_state(self.world_point(r, o), o)

    def task_goal(self, s0) -> float:
        return float(self.obj(s0)[1] + self.overall_goal)

    def terminal_cost(self, s, goal) -> np.ndarray:
        return np.abs(self.obj(s)[..., 1] - goal)

    def goal_reached(self, s, weights, goal, threshold=None) -> bool:
        thr = self.goal_threshold if threshold is None else threshold
        return bool(np.dot(weights, self.terminal_cost(s, goal)) <= thr)

    def metric(self, s_start, s_end, goal) -> float:
        return float(abs(self.obj(s_end)[1] - goal))


@dataclass(frozen=True, kw_only=True)
class RotorTask(TaskSpec):
    """Disk of radius r pinned at the origin; fingers touch its rim."""

    radius: float = 0.04
    sector_centers: tuple[float, ...] = (-np.pi / 6, np.pi / 2, 7 * np.pi / 6)
    sector_half: float = np.pi / 6
    r_in: float = 0.035
    r_out: float = 0.07
    target_margin: float = 0.005
    init_margin: float = 0.01
    replan_goal: float = -np.pi / 3
    fixed_goal: float = -1.7

    has_force_balance = False
    torque_env_index = 0

    def local_point_jac(self, q, o):
        q = np.asarray(q, dtype=float)
        o = np.asarray(o, dtype=float)
        c, s = _rot(o[..., 0])
        rx = c * q[..., 0] + s * q[..., 1]
        ry = -s * q[..., 0] + c * q[..., 1]
        c, s = np.broadcast_to(c, rx.shape), np.broadcast_to(s, rx.shape)
        r = np.stack([rx, ry], axis=-1)
        Rt = np.stack([np.stack([c, s], -1), np.stack([-s, c], -1)], -2)
        dr_do = np.stack([ry, -rx], -1)[..., None]
        return r, Rt, dr_do

    def world_point(self, r, o):
        r = np.asarray(r, dtype=float)
        o = np.asarray(o, dtype=float)
        c, s = _rot(o[..., 0])
        return np.stack([c * r[..., 0] - s * r[..., 1], s * r[..., 0] + c * r[..., 1]], axis=-1)

    def sd_local(self, r):
        r = np.asarray(r, dtype=float)
        n = np.linalg.norm(r, axis=-1)
        return n - self.radius, r / np.maximum(n, 1e-12)[..., None]

    def normal_local(self, r):
        r = np.asarray(r, dtype=float)
        n = np.maximum(np.linalg.norm(r, axis=-1), 1e-12)[..., None]
        u = r / n
        jac = (np.eye(2) - u[..., :, None] * u[..., None, :]) / n[..., None]
        return u, jac

    def kin_local(self, ra, rb):
        """Angle (rad) by which the contact slid around the rim."""
        ang = np.arctan2(_cross(rb, ra), np.sum(ra * rb, axis=-1))
        na = np.maximum(np.sum(ra * ra, axis=-1), 1e-24)[..., None]
        nb = np.maximum(np.sum(rb * rb, axis=-1), 1e-24)[..., None]
        da = _perp(ra) / na
        db = -_perp(rb) / nb
        return ang[..., None], da[..., None, :], db[..., None, :]

    @property
    def kin_dim(self) -> int:
        return 1

    @cached_property
    def target_angles(self) -> np.ndarray:
        return np.asarray(self.sector_centers) + self.sector_half - self.target_margin

    def target_points(self, o):
        """World-frame regrasp targets; the rim is symmetric so they stay fixed."""
        o = np.asarray(o, dtype=float)
        phi = self.target_angles
        pts = self.radius * np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        shape = o.shape[:-1] + pts.shape
        return np.broadcast_to(pts, shape), np.zeros(shape + (1,))

    @cached_property
    def q_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        hi = np.full((self.n_fingers, 2), self.r_out)
        return -hi, hi

    def _polar(self, Q, which=None):
        c = np.asarray(self.sector_centers)
        if which is not None:
            c = c[which]
        e = np.stack([np.cos(c), np.sin(c)], axis=-1)
        off = np.arctan2(_cross(e, Q), np.sum(e * Q, axis=-1))
        rad = np.linalg.norm(Q, axis=-1)
        return off, rad

    def clip_fingers(self, Q, which=None):
        Q = np.asarray(Q, dtype=float)
        off, rad = self._polar(Q, which)
        off_c = np.clip(off, -self.sector_half, self.sector_half)
        rad_c = np.clip(rad, self.r_in, self.r_out)
        if np.array_equal(off_c, off) and np.array_equal(rad_c, rad):
            return Q.copy()
        centers = np.asarray(self.sector_centers)
        ang = (centers if which is None else centers[which]) + off_c
        out = rad_c[..., None] * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        keep = (off_c == off) & (rad_c == rad)
        return np.where(keep[..., None], Q, out)

    def workspace_residual(self, Q):
        off, rad = self._polar(Q)
        return np.stack(
            [off - self.sector_half, -off - self.sector_half, rad - self.r_out, self.r_in - rad],
            axis=-1,
        )


    def initial_state(self, rng=None) -> np.ndarray:
        c = np.asarray(self.sector_centers)
        if rng is None:
            phi = self.target_angles
        else:
            lo = c - self.sector_half + self.init_margin
            hi = c + self.sector_half - self.target_margin
            phi = rng.uniform(lo, hi)
        Q = self.radius * np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        return self.make_state(Q, [0.0])

    def task_goal(self, s0) -> float:
        return float(self.obj(s0)[0] + self.replan_goal)

    def terminal_cost(self, s, goal) -> np.ndarray:
        return np.maximum(0.0, self.obj(s)[..., 0] - goal)

    def goal_reached(self, s, weights, goal, threshold=None) -> bool:
        return bool(np.dot(weights, self.obj(s)[..., 0]) <= goal)

    def metric(self, s_start, s_end, goal) -> float:
        return float(self.obj(s_start)[0] - self.obj(s_end)[0])


def make_card_task(**overrides) -> CardTask:
    kw = dict(
        name="card",
        n_fingers=2,
        obj_dim=3,
        env_dim=3,
        max_modes=5,
        modes=((1, 0), (0, 1), (1, 1), (0, 0)),
        mode_names=("index", "middle", "both", "regrasp"),
        mode_goals=((0.0, -0.02, 0.0),) * 3 + ((0.0, 0.0, 0.0),),
        prior_init=(0.25,) * 4,
        prior_trans=((0.25,) * 4,) * 4,
    )
    kw.update(overrides)
    return CardTask(**kw)


def make_rotor_task(**overrides) -> RotorTask:
    kw = dict(
        name="rotor",
        n_fingers=3,
        obj_dim=1,
        env_dim=1,
        max_modes=7,
        modes=((1, 1, 1), (1, 0, 1), (0, 1, 0)),
        mode_names=("turn", "regrasp_index", "regrasp_thumb_middle"),
        mode_goals=((-np.pi / 6,), (0.0,), (0.0,)),
        prior_init=(0.8, 0.1, 0.1),
        prior_trans=((0.1, 0.45, 0.45), (0.45, 0.1, 0.45), (0.45, 0.45, 0.1)),
    )
    kw.update(overrides)
    return RotorTask(**kw)


TASKS = {"card": make_card_task, "rotor": make_rotor_task}


def make_task(name: str, **overrides) -> TaskSpec:
    try:
        return TASKS[name](**overrides)
    except KeyError:
        raise DipsError(f"unknown task {name!r}; choose from {sorted(TASKS)}") from None


def task_from_dict(d: dict) -> TaskSpec:
    d = dict(d)
    kind = d.pop("kind")
    cls = {"card": CardTask, "rotor": RotorTask}[kind]
    names = {f.name for f in fields(cls)}
    kw = {}
    for k, v in d.items():
        if k not in names:
            continue
        kw[k] = _tupleize(v) if isinstance(v, list) else v
    return cls(**kw)


def _tupleize(v):
    if isinstance(v, list):
        return tuple(_tupleize(x) for x in v)
    return v


# -- per-state operations -----------------------------------------------------


def _mode(task, c) -> np.ndarray:
    c = np.asarray(c, dtype=int)
    task.mode_index(c)
    return c.astype(bool)


def signed_distance(task: TaskSpec, q, o) -> float:
    """Distance from a finger point to the contact surface; negative inside."""
    return task.signed_distance(q, o)


def contact_residual(task: TaskSpec, s, c) -> np.ndarray:
    c = _mode(task, c)
    return task.signed_distance(task.fingers(s)[c], task.obj(s))


def regrasp_clearance_residual(task: TaskSpec, s, c, t: int, H: int | None = None, delta=None):
    """Regrasping fingers: ``delta - sd <= 0`` before the last step, ``|sd|`` at it."""
    H = task.horizon if H is None else H
    delta = task.delta if delta is None else delta
    if not 1 <= t <= H:
        raise ValueError(f"t must lie in [1, {H}], got {t}")
    c = _mode(task, c)
    sd = task.signed_distance(task.fingers(s)[~c], task.obj(s))
    if t < H:
        return delta - sd
    return np.abs(sd)


def kinematics_residual(task: TaskSpec, s_t, s_next, c) -> np.ndarray:
    """Sticking contact: object-frame contact points do not move between steps.

    Object coordinates the contacts cannot drive (all of them with no contact,
    the card's angle with one) are held fixed as well.
    """
    c = _mode(task, c)
    ra = task.local_point(task.fingers(s_t)[c], task.obj(s_t))
    rb = task.local_point(task.fingers(s_next)[c], task.obj(s_next))
    stick = task.kin_local(ra, rb)[0].reshape(-1)
    lock = task.object_lock(c.astype(float)).astype(bool)
    drift = (task.obj(s_next) - task.obj(s_t))[lock]
    return np.concatenate([stick, drift])


def balance_residual(task: TaskSpec, s_t, u_t, c) -> np.ndarray:
    """Quasi-static force (card only) and torque balance about the object origin."""
    c = _mode(task, c)
    u_t = np.asarray(u_t, dtype=float)
    off = task.state_dim
    F = u_t[task.f_idx - off][c]
    fe = u_t[task.e_idx - off]
    r = task.local_point(task.fingers(s_t)[c], task.obj(s_t))
    torque = np.sum(_cross(r, F)) + fe[task.torque_env_index]
    if task.has_force_balance:
        force = F.sum(axis=0) + fe[:2]
        return np.concatenate([force, [torque]])
    return np.array([torque])


def friction_residual(task: TaskSpec, s_t, u_t, c) -> np.ndarray:
    """Per contact finger ``(|f_t| - mu f_n, -f_n)``, then ``|f_e| - f_e_max``."""
    c = _mode(task, c)
    u_t = np.asarray(u_t, dtype=float)
    off = task.state_dim
    F = u_t[task.f_idx - off][c]
    fe = u_t[task.e_idx - off]
    r = task.local_point(task.fingers(s_t)[c], task.obj(s_t))
    n, _ = task.normal_local(r)
    fn = -np.sum(F * n, axis=-1)
    ft = np.sum(F * _perp(n), axis=-1)
    per = np.stack([np.abs(ft) - task.mu * fn, -fn], axis=-1).reshape(-1)
    env_force = fe[:2] if task.has_force_balance else fe[:1]
    return np.concatenate([per, [np.linalg.norm(env_force) - task.env_force_max]])


def _fit_motion(task, A, B, o):
    """Least-squares rigid object motion (as a pose increment) taking A to B."""
    if isinstance(task, RotorTask):
        return np.array([np.arctan2(np.sum(_cross(A, B)), np.sum(A * B))])
    if len(A) == 1:
        return np.array([B[0, 0] - A[0, 0], B[0, 1] - A[0, 1], 0.0])
    a0, b0 = A.mean(axis=0), B.mean(axis=0)
    Ac, Bc = A - a0, B - b0
    dth = np.arctan2(np.sum(_cross(Ac, Bc)), np.sum(Ac * Bc))
    # p' = R(dth)(p - a0) + b0, written as an increment so zero motion is exact
    c, s = _rot(dth)
    d = o[:2] - a0
    t = np.array([(c - 1.0) * d[0] - s * d[1], s * d[0] + (c - 1.0) * d[1]]) + (b0 - a0)
    return np.array([t[0], t[1], dth])


def simulate_step(task: TaskSpec, s, dq, c) -> np.ndarray:
    """Ground-truth kinematic step.

    Fingers move by ``dq`` clipped to their workspaces.  The object follows the
    least-squares rigid fit of the in-contact fingers, scaled back if needed so
    that in-contact fingers, re-attached at their object-frame contact points,
    stay inside their workspaces.
    """
    c = _mode(task, c)
    s = np.asarray(s, dtype=float)
    Q = task.fingers(s)
    o = task.obj(s)
    Qn = task.clip_fingers(Q + np.asarray(dq, dtype=float).reshape(Q.shape))
    if not c.any():
        return task.make_state(Qn, o)
    r = task.local_point(Q[c], o)
    motion = _fit_motion(task, Q[c], Qn[c], o)

    def attach(lam):
        on = o + lam * motion
        return on, task.world_point(r, on)

    on, Qc = attach(1.0)
    if not task.in_workspace(Qc, c):
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if task.in_workspace(attach(mid)[1], c):
                lo = mid
            else:
                hi = mid
        on, Qc = attach(lo)
    out = Qn.copy()
    out[c] = Qc
    return task.make_state(out, on)


def rollout(task: TaskSpec, s0, dq_seq, c) -> np.ndarray:
    """Apply a sequence of finger displacements; returns (len+1, d_s) states."""
    states = [np.asarray(s0, dtype=float)]
    for dq in dq_seq:
        states.append(simulate_step(task, states[-1], dq, c))
    return np.stack(states)


def is_valid(task: TaskSpec, s, c) -> bool:
    """Rotor: every in-contact finger within 2*delta of the rim.  Card: always."""
    if isinstance(task, CardTask):
        return True
    c = _mode(task, c)
    sd = task.signed_distance(task.fingers(s)[c], task.obj(s))
    return bool(np.all(np.abs(sd) <= 2 * task.delta))


def cold_start(task: TaskSpec, s0, m: int) -> np.ndarray:
    """Initial guess for one mode: straight-line interpolation toward the mode goal.

    Contact fingers ride along with the object; regrasping fingers move on a
    straight line to their targets.  Forces are zero.  Returns (H, step_dim).
    """
    H = task.horizon
    s0 = np.asarray(s0, dtype=float)
    c = task.mode_array[m].astype(bool)
    Q0 = task.fingers(s0)
    o0 = task.obj(s0)
    goal = np.asarray(task.mode_goals[m], dtype=float)
    r = task.local_point(Q0[c], o0)

    def final_ok(lam):
        return task.in_workspace(task.world_point(r, o0 + lam * goal), c)

    lam = 1.0
    if c.any() and not final_ok(1.0):
        lo, hi = 0.0, 1.0
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if final_ok(mid) else (lo, mid)
        lam = lo
    w = np.linspace(0.0, 1.0, H)
    O = o0 + lam * w[:, None] * goal
    Q = np.repeat(Q0[None], H, axis=0)
    if c.any():
        Q[:, c] = task.world_point(r[None], O[:, None, :])
    if (~c).any():
        tgt, _ = task.target_points(O[-1])
        Q[:, ~c] = Q0[~c] + w[:, None, None] * (tgt[~c] - Q0[~c])
    Q = task.clip_fingers(Q)
    X = np.zeros((H, task.step_dim))
    X[:, task.q_idx] = Q
    X[:, task.o_idx] = O
    X[:-1, task.dq_idx] = Q[1:] - Q[:-1]
    X[0, : task.state_dim] = s0
    return X
