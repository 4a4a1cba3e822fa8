"""Best-first search over contact-mode sequences with particle variability.

Each node carries ``k`` trajectory chains (one per particle), their accumulated
realism scores and the mode sequence that produced them.  Children are made by
diffusing one new segment per parent particle, scoring it, discounting by
depth, and resampling.  ``f = g + h`` orders the open list, where ``g`` is the
score-weighted optimizer cost of the chains and ``h`` combines the expected
distance to the goal with the sequence's prior log-likelihood.
"""

from __future__ import annotations

import heapq
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import trajopt
from .core import DipsError
from .domain import TaskSpec, cold_start

VARIABILITY_MODES = ("full", "single", "max-likelihood")


class SearchError(DipsError):
    """The search could not produce any candidate sequence."""


@dataclass(frozen=True)
class SearchConfig:
    k: int = 16
    gamma: float = 0.9
    alpha: float = 1e4
    beta: float = 1e3
    timeout: float = 300.0
    max_depth: int = 7
    goal_threshold: float | None = None
    variability: str = "full"
    # deterministic budget; the wall-clock timeout is the paper's, this one
    # makes runs reproducible when a search would otherwise hit it
    max_expansions: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.variability not in VARIABILITY_MODES:
            raise ValueError(f"variability must be one of {VARIABILITY_MODES}")


class MarkovPrior:
    """First-order Markov distribution over mode sequences, floored at ``p_min``."""

    def __init__(self, init, trans, p_min: float = 0.1):
        self.p_min = float(p_min)
        self.init = self._floor(np.asarray(init, dtype=float)[None])[0]
        self.trans = self._floor(np.asarray(trans, dtype=float))

    def _floor(self, P):
        if np.any(P < 0):
            raise ValueError("prior probabilities must be non-negative")
        P = np.maximum(P, self.p_min)
        return P / P.sum(axis=1, keepdims=True)

    @classmethod
    def for_task(cls, task: TaskSpec) -> "MarkovPrior":
        return cls(task.prior_init, task.prior_trans, task.p_min)

    def loglik(self, seq, prev: int | None = None) -> float:
        """Log-probability of ``seq``; with ``prev`` it continues a chain that last executed ``prev``."""
        seq = list(seq)
        if not seq:
            return 0.0
        out = math.log(self.init[seq[0]] if prev is None else self.trans[prev, seq[0]])
        for a, b in zip(seq[:-1], seq[1:]):
            out += math.log(self.trans[a, b])
        return out


def prior_loglik(seq, prior: MarkovPrior, prev: int | None = None) -> float:
    return prior.loglik(seq, prev)


def update_goal_rotor(current_yaw: float, offset: float = -math.pi / 3) -> float:
    return float(current_yaw) + offset


@dataclass
class SearchNode:
    chains: np.ndarray  # (n, depth, H, step_dim)
    ends: np.ndarray  # (n, d_s) terminal state of each chain
    scores: np.ndarray  # (n,) accumulated realism scores
    costs: np.ndarray  # (n,) accumulated optimizer cost J of each chain
    seq: tuple[int, ...]
    node_id: int = 0
    g: float = 0.0
    h: float = 0.0
    mean_psi: float = float("nan")
    degenerate: bool = False

    @property
    def depth(self) -> int:
        return len(self.seq)

    @property
    def f(self) -> float:
        return self.g + self.h

    @property
    def k(self) -> int:
        return len(self.scores)

    def weights(self) -> np.ndarray:
        """Normalized scores; uniform when they sum to zero (root included)."""
        tot = self.scores.sum()
        if tot > 0:
            return self.scores / tot
        return np.full(self.k, 1.0 / self.k)


def root_node(task: TaskSpec, s0) -> SearchNode:
    s0 = np.asarray(s0, dtype=float)
    H, D = task.horizon, task.step_dim
    return SearchNode(np.zeros((1, 0, H, D)), s0[None].copy(), np.zeros(1), np.zeros(1), ())


def cost_to_come(node: SearchNode) -> float:
    return float(np.dot(node.weights(), node.costs))


def expected_terminal(task: TaskSpec, node: SearchNode, goal: float) -> float:
    return float(np.dot(node.weights(), task.terminal_cost(node.ends, goal)))


def heuristic(
    task: TaskSpec, node: SearchNode, prior: MarkovPrior, alpha: float, beta: float, goal: float, prev: int | None = None
) -> float:
    out = 0.0
    if alpha:
        out += alpha * expected_terminal(task, node, goal)
    if beta:
        out -= beta * prior.loglik(node.seq, prev)
    return out


def goal_test(task: TaskSpec, node: SearchNode, goal: float, threshold=None) -> bool:
    return task.goal_reached(node.ends, node.weights(), goal, threshold)


def _child_streams(seed: int, node_id: int, m: int):
    ss = np.random.SeedSequence(seed, spawn_key=(node_id, m))
    prop_seed = int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
    return prop_seed, np.random.default_rng(ss)


def resample(weights, k: int, rng) -> np.ndarray:
    """Multinomial resampling with replacement."""
    return rng.choice(len(weights), size=k, replace=True, p=weights)


def propagate_variability(
    task: TaskSpec, parent: SearchNode, m: int, proposal, scorer, k: int, gamma: float, seed: int,
    variability: str = "full",
) -> SearchNode:
    """Diffuse, score, discount and resample one child of ``parent``."""
    prop_seed, rng = _child_streams(seed, parent.node_id, m)
    n_par = parent.k
    if variability == "single":
        n_draw = 1
    else:
        n_draw = k
    idx = np.arange(n_draw) % n_par
    segs = np.asarray(proposal.propose(m, parent.ends[idx], prop_seed), dtype=float)
    psi = np.asarray(scorer.realism(segs, m), dtype=float)
    S = gamma ** parent.depth * psi + parent.scores[idx]
    degenerate = False
    if variability == "max-likelihood":
        sel = np.array([int(np.argmax(psi))])
    else:
        tot = S.sum()
        if tot > 0:
            w = S / tot
        else:
            w = np.full(len(S), 1.0 / len(S))
            degenerate = True
        sel = resample(w, n_draw, rng)
    J = trajopt.batch_total_cost(task, segs, np.full(len(segs), m))
    src = idx[sel]
    chains = np.concatenate([parent.chains[src], segs[sel][:, None]], axis=1)
    return SearchNode(
        chains,
        segs[sel, -1, : task.state_dim].copy(),
        S[sel],
        parent.costs[src] + J[sel],
        parent.seq + (int(m),),
        mean_psi=float(psi.mean()),
        degenerate=degenerate,
    )


@dataclass
class SearchReport:
    sequence: tuple[int, ...]
    termination: str
    nodes_expanded: int
    wall_time: float
    goal: float
    records: list = field(default_factory=list)

    def to_dict(self, timing: bool = True) -> dict:
        d = {
            "sequence": list(self.sequence),
            "termination": self.termination,
            "nodes_expanded": self.nodes_expanded,
            "goal": self.goal,
            "expansions": self.records,
        }
        if timing:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), sort_keys=True)


def astar_plan(
    task: TaskSpec, s0, goal: float, proposal, scorer, prior: MarkovPrior, cfg: SearchConfig, seed: int = 0,
    prev_mode: int | None = None,
):
    """Best-first search on ``f = g + h``; returns ``(best_node, report)``.

    Open-list ties break on (f, depth, insertion order), so equal-f siblings
    expand in mode-table order.  On timeout or exhaustion the expanded node
    with the smallest expected distance to the goal is returned.  When
    replanning mid-task, ``prev_mode`` is the last executed mode and the prior
    scores the plan as its continuation.
    """
    t0 = time.perf_counter()
    k = 1 if cfg.variability == "single" else cfg.k
    counter = 0
    root = root_node(task, s0)
    root.h = heuristic(task, root, prior, cfg.alpha, cfg.beta, goal, prev_mode)
    open_list = [(root.f, 0, counter, root)]
    expanded: list[SearchNode] = []
    records = []
    termination = "exhausted"
    best = None
    while open_list:
        if time.perf_counter() - t0 > cfg.timeout:
            termination = "timeout"
            break
        if cfg.max_expansions is not None and len(expanded) >= cfg.max_expansions:
            termination = "expansion_limit"
            break
        _, _, _, node = heapq.heappop(open_list)
        expanded.append(node)
        records.append(
            {
                "sequence": list(node.seq),
                "g": node.g,
                "h": node.h,
                "f": node.f,
                "mean_psi": None if math.isnan(node.mean_psi) else node.mean_psi,
                "depth": node.depth,
            }
        )
        if goal_test(task, node, goal, cfg.goal_threshold):
            termination = "goal"
            best = node
            break
        if node.depth >= cfg.max_depth:
            continue
        for m in range(len(task.modes)):
            child = propagate_variability(task, node, m, proposal, scorer, k, cfg.gamma, seed, cfg.variability)
            counter += 1
            child.node_id = counter
            child.g = cost_to_come(child)
            child.h = heuristic(task, child, prior, cfg.alpha, cfg.beta, goal, prev_mode)
            heapq.heappush(open_list, (child.f, child.depth, counter, child))
    if best is None:
        pool = [n for n in expanded if n.depth > 0] or expanded
        if not pool:
            raise SearchError("search expanded no nodes")
        phis = [expected_terminal(task, n, goal) for n in pool]
        best = pool[int(np.argmin(phis))]
    report = SearchReport(best.seq, termination, len(expanded), time.perf_counter() - t0, float(goal), records)
    return best, report


# -- stand-ins for the learned models -----------------------------------------


class NominalProposal:
    """Deterministic proposal: the straight-line cold start of each mode."""

    def __init__(self, task: TaskSpec):
        self.task = task

    def propose(self, m, starts, seed=0) -> np.ndarray:
        return np.stack([cold_start(self.task, s, int(m)) for s in np.atleast_2d(starts)])


class ConstantScorer:
    """Scores every trajectory with the same value."""

    def __init__(self, value: float = 1.0):
        self.value = float(value)

    def realism(self, X, modes=None) -> np.ndarray:
        return np.full(len(X), self.value)
