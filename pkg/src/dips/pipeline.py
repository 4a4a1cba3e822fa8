"""Demonstration generation, the execute/replan loop, ablations and metrics."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import trajopt
from .core import Dataset, DipsError
from .domain import TaskSpec, cold_start, is_valid, simulate_step
from .search import MarkovPrior, SearchConfig, astar_plan, update_goal_rotor

log = logging.getLogger(__name__)


def sample_prior_sequence(task: TaskSpec, length: int, rng) -> tuple[int, ...]:
    """Mode indices drawn from the task's demonstration prior.

    Card: i.i.d. uniform.  Rotor: blocks of turn followed by the two regrasp
    modes in random order, truncated to ``length``.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if task.name == "card":
        return tuple(int(m) for m in rng.integers(0, len(task.modes), size=length))
    seq = []
    while len(seq) < length:
        seq.append(0)
        seq.extend(int(m) for m in 1 + rng.permutation(2))
    return tuple(seq[:length])


def execute_segment(task: TaskSpec, s0, X, m: int) -> np.ndarray:
    """Replay an optimized segment through the simulator.

    The commanded displacement at step t is the planned finger motion
    ``q_{t+1} - q_t``, which equals the plan's ``dq_t`` once the consistency
    constraint holds but does not accumulate its residual over the horizon.
    Returns the executed (H, step_dim) array: simulator states, realized
    displacements (zero on the last step) and the optimizer's forces.
    """
    X = np.asarray(X, dtype=float)
    c = task.modes[m]
    H = task.horizon
    out = X.copy()
    s = np.asarray(s0, dtype=float)
    out[0, : task.state_dim] = s
    plan_q = X[:, task.q_idx]
    for t in range(H - 1):
        s = simulate_step(task, s, plan_q[t + 1] - plan_q[t], c)
        out[t + 1, : task.state_dim] = s
    Q = out[:, task.q_idx]
    out[:-1, task.dq_idx] = Q[1:] - Q[:-1]
    out[-1, task.dq_idx] = 0.0
    return out


def generate_dataset(
    task: TaskSpec,
    n_demos: int,
    seed: int = 0,
    cfg: trajopt.OptConfig | None = None,
    chunk: int = 128,
) -> Dataset:
    """Solve prior-sampled mode sequences from random starts and record executions.

    Demonstrations are advanced in lockstep, one mode at a time, so each round
    is a single batched optimizer call per chunk.
    """
    if n_demos < 1:
        raise ValueError("n_demos must be >= 1")
    cfg = trajopt.OptConfig().high_budget() if cfg is None else cfg
    K = task.max_modes
    rngs = [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(d,))) for d in range(n_demos)]
    starts = np.stack([task.initial_state(r) for r in rngs])
    seqs = np.array([sample_prior_sequence(task, K, r) for r in rngs])
    H, D = task.horizon, task.step_dim
    trajs = np.zeros((n_demos, K, H, D))
    lowq = np.zeros((n_demos, K), dtype=bool)
    state = starts.copy()
    for j in range(K):
        modes = seqs[:, j]
        X0 = np.stack([cold_start(task, s, m) for s, m in zip(state, modes)])
        for lo in range(0, n_demos, chunk):
            sl = slice(lo, min(lo + chunk, n_demos))
            X, info = trajopt.solve_batch(task, X0[sl], state[sl], modes[sl], cfg=cfg)
            viol = np.maximum(info["eq_max"], np.maximum(info["ineq_max"], 0.0))
            bad = (viol > 10 * cfg.tol) | info["failed"]
            lowq[sl, j] = bad
            for i, d in enumerate(range(sl.start, sl.stop)):
                trajs[d, j] = execute_segment(task, state[d], X[i], modes[d])
            if bad.any():
                log.info("round %d: %d low-quality segments", j, int(bad.sum()))
        state = trajs[:, j, -1, : task.state_dim].copy()
    demo = np.repeat(np.arange(n_demos), K)
    seg = np.tile(np.arange(K), n_demos)
    return Dataset(
        task,
        trajs.reshape(n_demos * K, H, D),
        seqs.reshape(-1),
        demo,
        seg,
        lowq.reshape(-1),
    )


# -- methods and execution -------------------------------------------------------

METHODS = (
    "dips",
    "csvto-fixed-sequence",
    "dips-fixed-sequence",
    "dips-no-replanning",
    "dips-no-variability",
    "dips-max-likelihood",
)
LEARNED_METHODS = tuple(m for m in METHODS if m != "csvto-fixed-sequence")


@dataclass(frozen=True)
class MethodConfig:
    method: str = "dips"
    search: SearchConfig = SearchConfig()
    opt: trajopt.OptConfig = trajopt.OptConfig()
    n_inits: int = 8

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.n_inits < 1:
            raise ValueError("n_inits must be >= 1")

    @property
    def plans(self) -> bool:
        return self.method not in ("csvto-fixed-sequence", "dips-fixed-sequence")

    @property
    def replans(self) -> bool:
        return self.plans and self.method != "dips-no-replanning"

    @property
    def diffusion_inits(self) -> bool:
        return self.method != "csvto-fixed-sequence"

    def search_config(self) -> SearchConfig:
        if self.method == "dips-no-variability":
            return replace(self.search, variability="single")
        if self.method == "dips-max-likelihood":
            return replace(self.search, variability="max-likelihood")
        return replace(self.search, variability="full")


@dataclass
class RunMetrics:
    task: str
    method: str
    trial: int
    seed: int
    metric_goal: float
    valid: bool
    modes_executed: tuple[int, ...]
    plan_time_s: float
    opt_time_s: float
    plan_calls: int = 0
    failed: bool = False
    message: str = ""
    chain: np.ndarray | None = None
    reports: list = field(default_factory=list)

    def row(self, timing: bool = True) -> dict:
        return {
            "task": self.task,
            "method": self.method,
            "trial": self.trial,
            "seed": self.seed,
            "metric_goal": repr(float(self.metric_goal)),
            "valid": int(self.valid),
            "modes_executed": "-".join(str(m) for m in self.modes_executed),
            "plan_time_s": f"{self.plan_time_s:.3f}" if timing else "",
            "opt_time_s": f"{self.opt_time_s:.3f}" if timing else "",
        }


CSV_HEADER = ("task", "method", "trial", "seed", "metric_goal", "valid", "modes_executed", "plan_time_s", "opt_time_s")


def trial_seed(base_seed: int, trial: int) -> int:
    """Per-trial seed shared by every method, so methods see the same start."""
    ss = np.random.SeedSequence(base_seed, spawn_key=(trial,))
    return int(ss.generate_state(1)[0])


def _stream(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _overall_goal(task: TaskSpec, s, method: MethodConfig) -> float:
    if task.name == "rotor":
        if method.replans:
            return update_goal_rotor(task.obj(s)[0], task.replan_goal)
        return task.fixed_goal
    return task.task_goal(s)


def _max_depth(task: TaskSpec, executed: int, cfg: SearchConfig) -> int:
    if task.name == "card":
        return max(0, min(cfg.max_depth, task.max_modes - executed))
    return cfg.max_depth


def execute_task(task: TaskSpec, method: MethodConfig, proposal=None, scorer=None, seed: int = 0, trial: int = 0) -> RunMetrics:
    """Plan, optimize and execute up to ``task.max_modes`` modes from a seeded start."""
    if method.diffusion_inits and proposal is None:
        raise DipsError(f"method {method.method!r} needs a diffusion model")
    if method.plans and scorer is None:
        raise DipsError(f"method {method.method!r} needs a discriminator")
    s = task.initial_state(_stream(seed, 0))
    s_start = s.copy()
    seq_rng = _stream(seed, 1)
    prior = MarkovPrior.for_task(task)
    fixed_seq = sample_prior_sequence(task, task.max_modes, seq_rng) if not method.plans else None
    card_goal = task.task_goal(s)
    goal = _overall_goal(task, s, method)
    scfg = method.search_config()
    executed: list[int] = []
    segments = []
    plan_time = opt_time = 0.0
    plan_calls = 0
    reports = []
    planned: tuple[int, ...] | None = None
    valid, failed, message = True, False, ""
    for step in range(task.max_modes):
        if task.name == "rotor" and method.replans:
            goal = _overall_goal(task, s, method)
        if method.plans:
            if method.replans or planned is None:
                cfg = replace(scfg, max_depth=_max_depth(task, step, scfg))
                t0 = time.perf_counter()
                try:
                    _, rep = astar_plan(
                        task, s, goal, proposal, scorer, prior, cfg,
                        seed=int(_stream(seed, 2, step).integers(2**62)),
                        prev_mode=executed[-1] if executed else None,
                    )
                except DipsError as err:
                    failed, message = True, f"planner failure: {err}"
                    break
                plan_time += time.perf_counter() - t0
                plan_calls += 1
                reports.append(rep)
                planned = rep.sequence
                cursor = 0
            if cursor >= len(planned):
                break
            m = planned[cursor]
            cursor += 1
        else:
            m = fixed_seq[step]
        t0 = time.perf_counter()
        if method.diffusion_inits:
            inits = proposal.propose(m, np.tile(s, (method.n_inits, 1)), seed=int(_stream(seed, 3, step).integers(2**62)))
        else:
            inits = [cold_start(task, s, m)]
        try:
            traj, _ = trajopt.optimize(task, s, m, inits=inits, cfg=method.opt)
        except DipsError as err:
            failed, message = True, f"optimizer failure: {err}"
            break
        opt_time += time.perf_counter() - t0
        seg = execute_segment(task, s, traj.to_array(), m)
        segments.append(seg)
        executed.append(int(m))
        s = seg[-1, : task.state_dim].copy()
        if not all(is_valid(task, st, task.modes[m]) for st in seg[:, : task.state_dim]):
            valid, message = False, f"invalid state during mode {m}"
            break
    metric = task.metric(s_start, s, card_goal if task.name == "card" else goal)
    return RunMetrics(
        task.name,
        method.method,
        trial,
        seed,
        metric,
        valid,
        tuple(executed),
        plan_time,
        opt_time,
        plan_calls,
        failed,
        message,
        np.stack(segments) if segments else np.zeros((0, task.horizon, task.step_dim)),
        reports,
    )


def _run_one(args):
    task, method, proposal, scorer, seed, trial = args
    return execute_task(task, method, proposal, scorer, seed, trial)


def evaluate(task: TaskSpec, methods, trials: int, base_seed: int = 0, proposal=None, scorer=None, jobs: int = 1):
    """Run every (method, trial) pair; returns (rows ordered by method then trial, aggregates)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    methods = [m if isinstance(m, MethodConfig) else MethodConfig(m) for m in methods]
    jobs_list = [
        (task, m, proposal if m.diffusion_inits else None, scorer if m.plans else None, trial_seed(base_seed, t), t)
        for m in methods
        for t in range(trials)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, jobs_list))
    else:
        results = [_run_one(a) for a in jobs_list]
    return results, aggregate(results)


def aggregate(results) -> dict:
    """Per-method mean and (population) standard deviation of the goal metric."""
    out = {}
    for r in results:
        out.setdefault(r.method, []).append(r)
    agg = {}
    for method, rs in out.items():
        vals = np.array([r.metric_goal for r in rs])
        agg[method] = {
            "trials": len(rs),
            "metric_mean": float(vals.mean()),
            "metric_std": float(vals.std()),
            "valid_fraction": float(np.mean([r.valid for r in rs])),
            "failed": int(sum(r.failed for r in rs)),
        }
    return agg
