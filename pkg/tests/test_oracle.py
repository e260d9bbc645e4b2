import numpy as np
import pytest

from cisr.cmdp import TabularPolicy, build_cmdp, exact_expected_return, exact_expected_visits
from cisr.errors import BudgetExceeded, NoFeasible
from cisr.fixtures import broken_fixture, identity_fixture, prop_fixtures, shortcut_cmdp, slip_grid
from cisr.frozen_lake import trigger_ring
from cisr.interventions import reset_to_initial
from cisr.oracle import (EnumerationBudget, decision_states, deterministic_stats,
                         enumerate_policy_stats, policy_count, solve_exact, tree_stats,
                         verify_prop1, verify_prop2)


def two_by_two():
    return build_cmdp({"n_states": 2, "n_actions": 2, "horizon": 3,
                       "transitions": [[0, 0, 0, 1.0, 0.0], [0, 1, 1, 1.0, 1.0],
                                       [1, 0, 0, 1.0, 0.5], [1, 1, 1, 1.0, 0.0]]})


def test_count_two_by_two():
    assert len(list(enumerate_policy_stats(two_by_two()))) == 4


def test_single_state_return():
    m = build_cmdp({"n_states": 1, "n_actions": 1, "horizon": 5,
                    "transitions": [[0, 0, 0, 1.0, 2.0]]})
    rows = list(enumerate_policy_stats(m))
    assert len(rows) == 1 and rows[0][2] == 10.0


def test_batch_matches_tree_and_dp():
    _, m = slip_grid("SFF\nFHF\nFFG", horizon=6)
    states = decision_states(m)
    assert len(states) == 7
    rng = np.random.default_rng(0)
    rows = {r[0]: r for r in enumerate_policy_stats(m, states=states)}
    for idx in rng.integers(0, policy_count(m), size=25):
        acts = np.zeros(9, dtype=int)
        rem = int(idx)
        for s in reversed(states):
            acts[s], rem = rem % 4, rem // 4
        ret, vis = deterministic_stats(m, acts[None, :], [m.unsafe_set])
        t_ret, t_vis = tree_stats(m, acts)
        pol = TabularPolicy.deterministic(acts, 4)
        assert abs(ret[0] - t_ret) < 1e-10 and abs(vis[0, 0] - t_vis[0]) < 1e-10
        assert abs(exact_expected_return(m, pol) - t_ret) < 1e-10
        assert abs(rows[int(idx)][2] - t_ret) < 1e-10


def test_huge_kappa_is_unconstrained_optimum():
    _, m = slip_grid("SFF\nFHF\nFFG", horizon=6, kappa=1e9)
    _, value, _ = solve_exact(m)
    best = max(r[2] for r in enumerate_policy_stats(m))
    assert value == best


def test_no_feasible_policy():
    m = build_cmdp({"n_states": 2, "n_actions": 1, "horizon": 2, "kappa": 0.0,
                    "unsafe": [1], "terminal": [1], "transitions": [[0, 0, 1, 1.0], [1, 0, 1, 1.0]]})
    with pytest.raises(NoFeasible):
        solve_exact(m)


def test_budget_guard():
    _, m = slip_grid("SFF\nFHF\nFFG", horizon=6)
    with pytest.raises(BudgetExceeded):
        solve_exact(m, EnumerationBudget(max_policies=10))


def test_shortcut_oracle_takes_long_path():
    m = shortcut_cmdp()
    pol, value, _ = solve_exact(m)
    assert abs(value - 0.5) < 1e-12
    assert exact_expected_visits(m, pol, m.unsafe_set) == 0.0
    # the unconstrained optimum is the risky short route
    free = shortcut_cmdp(kappa=1e9)
    _, v_free, _ = solve_exact(free)
    assert v_free > value


def test_prop1_vacuous_flag():
    grid, base = slip_grid("SFF\nFHF\nFFG", horizon=6, kappa=0.1)
    iv = reset_to_initial(base, trigger_ring(grid, 1), "loose", 0.2)
    rep = verify_prop1(base, iv, n_random=100)
    assert rep.vacuous and not rep.premise_holds


def test_identity_intervention_prop1():
    base, iv = identity_fixture()
    rep = verify_prop1(base, iv, n_random=500)
    assert rep.verified and rep.feasible_in_induced > 0


def test_prop2_counterexample_on_broken_fixture():
    base, iv = broken_fixture()
    rep = verify_prop2(base, iv)
    assert not rep.premise_holds and len(rep.counterexamples) >= 1


def test_prop2_empty_unsafe_set():
    _, base = slip_grid("SFF\nFFF\nFFG", horizon=4)
    iv = reset_to_initial(base, frozenset(), "none", 0.0)
    assert verify_prop2(base, iv).verified


def test_fixtures_are_small():
    fx = prop_fixtures()
    assert len(fx) >= 3
    for base, ivs in fx.values():
        assert base.n_states <= 9 and base.horizon <= 10
        for iv in ivs.values():
            assert iv.tau + iv.kappa_i <= base.kappa
