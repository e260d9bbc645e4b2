import numpy as np
import pytest

from cisr.errors import ResetIntoTrigger, TriggerOutOfRange
from cisr.fixtures import slip_grid
from cisr.frozen_lake import trigger_ring
from cisr.interventions import (Intervention, check_eventual_safety, check_learning_safety,
                                graph_distance, identity_intervention, induce, reset_to_initial,
                                reset_to_previous)
from cisr.simulator import GOAL, HORIZON, TabularSimulator
from cisr.rng import UniformStream

GRID = "SFF\nFHF\nFFG"


@pytest.fixture
def grid_base():
    return slip_grid(GRID)


def test_empty_trigger_is_identity(grid_base):
    _, base = grid_base
    m = induce(base, identity_intervention(base.n_states)).cmdp
    assert np.array_equal(m.transition, base.transition)
    assert np.array_equal(m.reward, base.reward)


def test_reset_into_trigger_rejected():
    K = np.zeros((3, 3))
    K[1, 2] = 1.0
    K[2, 0] = 1.0
    with pytest.raises(ResetIntoTrigger):
        Intervention("bad", frozenset({1, 2}), K)


def test_trigger_out_of_range():
    with pytest.raises(TriggerOutOfRange):
        Intervention("bad", frozenset({5}), np.zeros((3, 3)))


def test_ring_rows_replaced(grid_base):
    grid, base = grid_base
    ring = trigger_ring(grid, 1)
    iv = reset_to_initial(base, ring, "ring", 0.1)
    m = induce(base, iv).cmdp
    for s in range(9):
        for a in range(4):
            if s in ring:
                assert np.array_equal(m.transition[s, a], base.initial_dist)
                assert not m.reward[s, a].any()
            else:
                assert np.array_equal(m.transition[s, a], base.transition[s, a])
    assert not (m.terminal_set & ring)


def test_blanket_checks(grid_base):
    grid, base = grid_base
    assert not check_learning_safety(base, reset_to_initial(base, base.unsafe_set, "D", 0.0))
    assert check_learning_safety(base, reset_to_initial(base, trigger_ring(grid, 1), "ring", 0.0))
    assert not check_learning_safety(base, identity_intervention(9))


def test_eventual_safety_premise():
    iv = lambda tau, ki: Intervention("x", frozenset(), np.zeros((2, 2)), tau, ki)
    assert check_eventual_safety(iv(0.1, 0.0), 0.1)
    assert not check_eventual_safety(iv(0.1, 0.05), 0.1)
    assert check_eventual_safety(iv(0.0, 0.0), 0.0)


def test_previous_state_stand_in_uses_predecessors(grid_base):
    grid, base = grid_base
    ring = trigger_ring(grid, 1)
    iv = reset_to_previous(base, ring, "back", 0.1)
    for s in ring:
        row = iv.reset_kernel[s]
        assert abs(row.sum() - 1.0) < 1e-12
        assert not set(np.nonzero(row)[0]) & ring


def test_graph_distance(grid_base):
    _, base = grid_base
    d = graph_distance(base, [4])
    assert d[4] == 0 and d[1] == 1 and d[0] == 2


def test_simulator_soft_reset_returns_to_previous_state(grid_base):
    grid, base = grid_base
    ring = trigger_ring(grid, 1)
    sim = TabularSimulator(base, reset_to_previous(base, ring, "back", 0.1))
    u = UniformStream(0)
    for _ in range(200):
        s, _, _ = sim.reset(u)
        prev, done = s, False
        while not done:
            s, _, done, hits, trig, failed, outcome = sim.step(1, u)
            assert not failed
            if trig and not done:
                assert s == prev and sim.t >= 2
            prev = s
        assert outcome in (GOAL, HORIZON)
