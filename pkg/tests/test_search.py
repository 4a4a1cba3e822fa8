import math
import time

import numpy as np
import pytest

from dips.domain import cold_start
from dips.search import (
    ConstantScorer,
    MarkovPrior,
    NominalProposal,
    SearchConfig,
    SearchNode,
    astar_plan,
    cost_to_come,
    goal_test,
    heuristic,
    prior_loglik,
    propagate_variability,
    resample,
    root_node,
    update_goal_rotor,
)
from oracles import enumerate_nominal, oracle_goal


def _node(task, ends, scores=None, costs=None, seq=()):
    ends = np.atleast_2d(ends)
    n = len(ends)
    H, D = task.horizon, task.step_dim
    return SearchNode(
        np.zeros((n, len(seq), H, D)),
        ends,
        np.zeros(n) if scores is None else np.asarray(scores, dtype=float),
        np.zeros(n) if costs is None else np.asarray(costs, dtype=float),
        tuple(seq),
    )


class _IndexProposal:
    """Cold start with the sample index written into the last object entry."""

    def __init__(self, task):
        self.task = task

    def propose(self, m, starts, seed=0):
        out = np.stack([cold_start(self.task, s, m) for s in starts])
        out[:, -1, self.task.o_idx[-1]] = np.arange(len(starts))
        return out


class _FixedScorer:
    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def realism(self, X, modes=None):
        return self.values[: len(X)]


# --- prior -------------------------------------------------------------------


def test_prior_examples(card, rotor):
    p = MarkovPrior.for_task(rotor)
    assert prior_loglik((0,), p) == pytest.approx(math.log(0.8))
    assert prior_loglik((0,), p) == pytest.approx(-0.2231, abs=1e-4)
    assert prior_loglik((0, 0), p) == pytest.approx(-2.5258, abs=1e-4)
    q = MarkovPrior.for_task(card)
    for L in range(5):
        seq = tuple(np.random.default_rng(L).integers(0, 4, size=L))
        assert prior_loglik(seq, q) == pytest.approx(L * math.log(0.25))


def test_prior_continuation(rotor):
    p = MarkovPrior.for_task(rotor)
    assert prior_loglik((0,), p, prev=0) == pytest.approx(math.log(0.1))
    assert prior_loglik((1, 2), p, prev=0) == pytest.approx(2 * math.log(0.45))
    # scoring a continuation equals splitting the full chain's log-likelihood
    rng = np.random.default_rng(3)
    for _ in range(20):
        full = tuple(int(m) for m in rng.integers(0, 3, size=6))
        assert prior_loglik(full, p) == pytest.approx(prior_loglik(full[:2], p) + prior_loglik(full[2:], p, prev=full[1]))


def test_prior_floor_and_rows():
    p = MarkovPrior([1.0, 0.0], [[0.0, 1.0], [0.5, 0.5]], p_min=0.1)
    assert np.allclose(p.trans.sum(axis=1), 1.0)
    assert p.init[1] > 0 and p.trans[0, 0] > 0
    with pytest.raises(ValueError):
        MarkovPrior([1.0, -0.1], [[1, 0], [0, 1]])


# --- heuristic and cost-to-come ----------------------------------------------


def test_heuristic_at_goal_card(card):
    s0 = card.initial_state(np.random.default_rng(0))
    goal = card.obj(s0)[1]
    node = _node(card, np.tile(s0, (16, 1)), seq=(2,))
    h = heuristic(card, node, MarkovPrior.for_task(card), 1e4, 1e3, goal)
    assert h == pytest.approx(1000 * math.log(4))
    assert h == pytest.approx(1386.29, abs=0.01)


def test_heuristic_zero_weights_and_linearity(card):
    rng = np.random.default_rng(1)
    ends = np.stack([card.initial_state(rng) for _ in range(4)])
    node = _node(card, ends, seq=(0, 1))
    prior = MarkovPrior.for_task(card)
    assert heuristic(card, node, prior, 0.0, 0.0, -0.5) == 0.0
    goal = float(card.obj(ends[0])[1]) - 0.01
    h1 = heuristic(card, node, prior, 1e4, 0.0, goal)
    # moving every particle twice as far from the goal doubles the term
    far = ends.copy()
    far[:, card.o_idx[1]] = goal + 2 * (ends[:, card.o_idx[1]] - goal)
    h2 = heuristic(card, _node(card, far, seq=(0, 1)), prior, 1e4, 0.0, goal)
    assert h2 == pytest.approx(2 * h1, rel=1e-12)


def test_cost_to_come_examples(card):
    s = card.initial_state()
    assert cost_to_come(_node(card, s[None], scores=[0.3], costs=[2.5])) == 2.5
    assert cost_to_come(_node(card, np.tile(s, (2, 1)), scores=[1, 1], costs=[2, 4])) == pytest.approx(3.0)
    assert cost_to_come(_node(card, np.tile(s, (2, 1)), scores=[0.75, 0.25], costs=[0, 4])) == pytest.approx(1.0)


# --- goal test ---------------------------------------------------------------


def test_goal_test_examples(card, rotor):
    s = card.initial_state()
    y = card.obj(s)[1]
    assert goal_test(card, _node(card, np.tile(s, (3, 1))), y)
    assert not goal_test(card, _node(card, s[None]), y - 0.006, threshold=0.005)
    r = rotor.initial_state()
    yaw = rotor.obj(r)[0]
    assert goal_test(rotor, _node(rotor, r[None]), yaw)
    assert not goal_test(rotor, _node(rotor, r[None]), yaw - 1e-9)


def test_rotor_goal_update(rotor):
    assert update_goal_rotor(0.0) == pytest.approx(-math.pi / 3)
    assert update_goal_rotor(-math.pi / 3) == pytest.approx(-2 * math.pi / 3)
    assert rotor.fixed_goal == -1.7


# --- variability propagation -------------------------------------------------


def test_discount_example(card):
    s = card.initial_state()
    parent = _node(card, np.tile(s, (16, 1)), seq=(0, 1))
    child = propagate_variability(card, parent, 2, NominalProposal(card), ConstantScorer(0.5), 16, 0.9, seed=0)
    assert np.allclose(child.scores, 0.405, rtol=0, atol=1e-15)
    assert child.k == 16 and child.depth == 3


def test_depth_zero_adds_scores_exactly(card):
    root = root_node(card, card.initial_state())
    root.scores = np.array([0.25])
    child = propagate_variability(card, root, 0, NominalProposal(card), ConstantScorer(0.6), 4, 0.9, seed=0)
    assert np.all(child.scores == 0.6 + 0.25)


def test_uniform_scores_give_uniform_weights(card):
    root = root_node(card, card.initial_state())
    child = propagate_variability(card, root, 1, NominalProposal(card), ConstantScorer(0.3), 8, 0.9, seed=0)
    assert np.allclose(child.weights(), 1 / 8)
    assert child.weights().sum() == pytest.approx(1.0, abs=1e-9)


def test_single_winner_is_always_resampled(card):
    root = root_node(card, card.initial_state())
    psi = np.zeros(8)
    psi[5] = 1.0
    child = propagate_variability(card, root, 0, _IndexProposal(card), _FixedScorer(psi), 8, 0.9, seed=3)
    assert np.all(child.ends[:, card.o_idx[-1]] == 5)
    assert np.all(child.scores == 1.0)


def test_zero_scores_fall_back_to_uniform(card):
    root = root_node(card, card.initial_state())
    child = propagate_variability(card, root, 0, _IndexProposal(card), ConstantScorer(0.0), 8, 0.9, seed=1)
    assert child.degenerate
    assert np.allclose(child.weights(), 1 / 8)


def test_single_and_max_likelihood_variants(card):
    root = root_node(card, card.initial_state())
    psi = np.array([0.1, 0.7, 0.3, 0.2])
    one = propagate_variability(card, root, 0, _IndexProposal(card), _FixedScorer(psi), 4, 0.9, seed=0, variability="single")
    assert one.k == 1
    ml = propagate_variability(card, root, 0, _IndexProposal(card), _FixedScorer(psi), 4, 0.9, seed=0, variability="max-likelihood")
    assert ml.k == 1 and ml.ends[0, card.o_idx[-1]] == 1 and ml.scores[0] == 0.7


def test_resampling_frequencies():
    rng = np.random.default_rng(0)
    for _ in range(3):
        w = rng.random(6)
        w /= w.sum()
        idx = resample(w, 100_000, np.random.default_rng(rng.integers(2**32)))
        freq = np.bincount(idx, minlength=6) / 100_000
        assert np.all(np.abs(freq - w) <= 0.01)


def test_scores_accumulate_and_chains_continue(card):
    s0 = card.initial_state(np.random.default_rng(2))
    psi = np.array([0.2, 0.9, 0.4, 0.6])
    scorer = _FixedScorer(psi)
    a = propagate_variability(card, root_node(card, s0), 2, NominalProposal(card), scorer, 4, 0.9, seed=0)
    a.node_id = 1
    b = propagate_variability(card, a, 0, NominalProposal(card), scorer, 4, 0.9, seed=0)
    # every child score is a parent score plus a discounted realism term
    for sc in b.scores:
        assert np.any(np.isclose(sc - 0.9 * psi[:, None], a.scores[None], rtol=0, atol=1e-12))
        assert sc >= a.scores.min()
    for chain in b.chains:
        assert np.allclose(chain[1, 0, : card.state_dim], chain[0, -1, : card.state_dim], rtol=0, atol=1e-9)
        assert np.array_equal(chain[0, 0, : card.state_dim], s0)


# --- search ------------------------------------------------------------------


def test_goal_at_root_returns_empty(card):
    s0 = card.initial_state()
    node, rep = astar_plan(card, s0, card.obj(s0)[1], NominalProposal(card), ConstantScorer(), MarkovPrior.for_task(card), SearchConfig(k=2))
    assert node.seq == () and rep.termination == "goal" and rep.nodes_expanded == 1


def test_ties_expand_in_mode_order(card, monkeypatch):
    from dips import search, trajopt

    monkeypatch.setattr(trajopt, "batch_total_cost", lambda task, X, modes, goals=None, cfg=None: np.zeros(len(X)))
    cfg = SearchConfig(k=1, alpha=0.0, beta=0.0, max_depth=2, max_expansions=6)
    s0 = card.initial_state()
    _, rep = search.astar_plan(card, s0, -10.0, NominalProposal(card), ConstantScorer(), MarkovPrior.for_task(card), cfg)
    order = [tuple(r["sequence"]) for r in rep.records]
    assert order == [(), (0,), (1,), (2,), (3,), (0, 0)]
    assert rep.termination == "expansion_limit"


def test_search_is_deterministic(rotor):
    s0 = rotor.initial_state(np.random.default_rng(4))
    cfg = SearchConfig(k=4, max_depth=3, max_expansions=10)
    psi = _FixedScorer(np.linspace(0.2, 0.9, 4))
    args = (rotor, s0, rotor.obj(s0)[0] - 0.4, _IndexProposal(rotor), psi, MarkovPrior.for_task(rotor), cfg)
    a, ra = astar_plan(*args, seed=7)
    b, rb = astar_plan(*args, seed=7)
    assert a.seq == b.seq and ra.to_json(timing=False) == rb.to_json(timing=False)
    assert "wall_time" not in ra.to_dict(timing=False)


def test_fallback_prefers_closest_expanded(card):
    s0 = card.initial_state(np.random.default_rng(5))
    cfg = SearchConfig(k=2, alpha=1.0, beta=0.0, max_depth=1)
    node, rep = astar_plan(card, s0, card.obj(s0)[1] - 1.0, NominalProposal(card), ConstantScorer(), MarkovPrior.for_task(card), cfg)
    assert rep.termination == "exhausted" and node.depth == 1
    assert node.seq[0] != 3  # the mode that leaves the card in place is never closest


def test_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(k=0)
    with pytest.raises(ValueError):
        SearchConfig(gamma=1.5)
    with pytest.raises(ValueError):
        SearchConfig(variability="best")


@pytest.mark.parametrize("name", ["card", "rotor"])
def test_uniform_cost_search_matches_enumeration(name, request):
    task = request.getfixturevalue(name)
    rng = np.random.default_rng(10)
    cfg = SearchConfig(k=2, alpha=0.0, beta=0.0, max_depth=3)
    t0 = time.perf_counter()
    for _ in range(3):
        s0 = task.initial_state(rng)
        goal = oracle_goal(task, s0, rng)
        table = {seq: g for seq, g, ok in enumerate_nominal(task, s0, goal, 3) if ok}
        best = min(table.values())
        node, rep = astar_plan(task, s0, goal, NominalProposal(task), ConstantScorer(1.0), MarkovPrior.for_task(task), cfg)
        assert rep.termination == "goal"
        assert table[node.seq] == best
        assert node.g == pytest.approx(best, rel=1e-12)
    assert time.perf_counter() - t0 < 10
