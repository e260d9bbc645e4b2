import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cisr.cmdp import (TabularPolicy, build_cmdp, dumps, exact_expected_return,
                       exact_expected_visits, is_feasible, loads, occupancy, policy_stats, rollout)
from cisr.errors import DimensionMismatch, NonStochasticRow, UnsafeNotTerminal
from cisr.fixtures import slip_grid
from cisr.oracle import tree_stats


def chain(reward=6.0, horizon=5):
    """State 0 moves deterministically to terminal state 1."""
    return build_cmdp({
        "n_states": 2, "n_actions": 1, "horizon": horizon,
        "transitions": [[0, 0, 1, 1.0, reward], [1, 0, 1, 1.0, 0.0]],
        "terminal": [1], "initial": {0: 1.0},
    })


def self_loop(r=0.0, horizon=4):
    return build_cmdp({"n_states": 1, "n_actions": 1, "horizon": horizon,
                       "transitions": [[0, 0, 0, 1.0, r]]})


def test_trivial_self_loop_is_valid():
    m = self_loop(horizon=7)
    assert m.horizon == 7 and m.n_states == 1


def test_unnormalised_row_rejected():
    with pytest.raises(NonStochasticRow):
        build_cmdp({"n_states": 1, "n_actions": 1, "horizon": 1,
                    "transitions": [[0, 0, 0, 0.99]]})


def test_unsafe_must_be_terminal():
    with pytest.raises(UnsafeNotTerminal):
        build_cmdp({"n_states": 2, "n_actions": 1, "horizon": 1, "unsafe": [1],
                    "transitions": [[0, 0, 1, 1.0], [1, 0, 1, 1.0]]})


def test_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        build_cmdp({"n_states": 2, "n_actions": 1, "horizon": 1,
                    "transition": np.ones((1, 1, 1))})


def test_slip_grid_rows_sum_to_one():
    _, m = slip_grid("SFF\nFHF\nFFG")
    assert np.allclose(m.transition.sum(axis=2), 1.0)


def test_constant_reward_return():
    m = self_loop(r=1.0, horizon=4)
    assert exact_expected_return(m, TabularPolicy.uniform(1, 1)) == 4.0


def test_chain_goal_return():
    assert exact_expected_return(chain(), TabularPolicy.uniform(2, 1)) == 6.0


def test_chain_rollout_length_and_determinism():
    m = chain()
    pol = TabularPolicy.uniform(2, 1)
    t1, t2 = rollout(m, pol, 3), rollout(m, pol, 3)
    assert len(t1) == 1 and t1.steps[-1].next_state == 1
    assert t1 == t2


def test_visits_empty_target_and_single_pass():
    m = chain()
    pol = TabularPolicy.uniform(2, 1)
    assert exact_expected_visits(m, pol, frozenset()) == 0.0
    assert exact_expected_visits(m, pol, {1}) == 1.0


def test_terminal_counted_once():
    m = chain(horizon=10)
    d = occupancy(m, TabularPolicy.uniform(2, 1))
    assert d[:, 1].sum() == 1.0


def test_rollout_frequencies_match_kernel():
    _, m = slip_grid("SFF\nFFF\nFFG")
    pol = TabularPolicy.deterministic([1] * 9, 4)  # always right
    counts = np.zeros(9)
    n = 10_000
    for seed in range(n):
        counts[rollout(m, pol, seed).steps[0].next_state] += 1
    assert np.all(np.abs(counts / n - m.transition[0, 1]) < 0.02)


def test_return_matches_monte_carlo():
    _, m = slip_grid("SFF\nFHF\nFFG", horizon=6)
    rng = np.random.default_rng(0)
    pol = TabularPolicy(rng.dirichlet(np.ones(4), size=9))
    exact = exact_expected_return(m, pol)
    totals = np.array([rollout(m, pol, s).total_reward for s in range(20_000)])
    se = totals.std() / np.sqrt(len(totals))
    assert abs(totals.mean() - exact) < 3 * se + 1e-12


def test_visits_match_trajectory_tree():
    _, m = slip_grid("SFF\nFHF\nFFG", horizon=6)
    rng = np.random.default_rng(1)
    for _ in range(5):
        acts = rng.integers(4, size=9)
        pol = TabularPolicy.deterministic(acts, 4)
        ret, vis = tree_stats(m, acts)
        assert abs(exact_expected_return(m, pol) - ret) < 1e-12
        assert abs(exact_expected_visits(m, pol, m.unsafe_set) - vis[0]) < 1e-12


def test_feasibility_boundaries():
    m = build_cmdp({"n_states": 3, "n_actions": 2, "horizon": 2, "kappa": 0.0,
                    "unsafe": [2], "terminal": [1, 2],
                    "transitions": [[0, 0, 1, 1.0], [0, 1, 1, 0.9], [0, 1, 2, 0.1],
                                    [1, 0, 1, 1.0], [1, 1, 1, 1.0], [2, 0, 2, 1.0], [2, 1, 2, 1.0]]})
    assert is_feasible(m, TabularPolicy.deterministic([0, 0, 0], 2))
    risky = TabularPolicy.deterministic([1, 0, 0], 2)
    assert abs(exact_expected_visits(m, risky, m.unsafe_set) - 0.1) < 1e-12
    assert not is_feasible(m, risky)


def test_dumps_loads_round_trip():
    _, m = slip_grid("SFF\nFHF\nFFG")
    m2 = loads(dumps(m))
    assert np.array_equal(m.transition, m2.transition)
    assert np.array_equal(m.reward, m2.reward)
    assert m.unsafe_set == m2.unsafe_set and m.terminal_set == m2.terminal_set


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_occupancy_rows_never_exceed_one(seed):
    _, m = slip_grid("SFF\nFHF\nFFG", horizon=8)
    pol = TabularPolicy(np.random.default_rng(seed).dirichlet(np.ones(4), size=9))
    d = occupancy(m, pol)
    assert np.all(d.sum(axis=1) <= 1.0 + 1e-12)
    s = policy_stats(m, pol)
    assert 0.0 <= s.expected_unsafe_visits <= 1.0 + 1e-12
