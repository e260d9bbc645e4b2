import numpy as np
import pytest

from cisr.errors import ConfigInvalid
from cisr.lander import (LANDER_ACTIONS, MAIN, NOP, Discretization, FunnelIntervention,
                         LanderConfig, LanderCurriculumEnv, LanderSimulator, LanderState, Terrain,
                         build_lander_interventions, potential, reset_rescue, step_lander, trigger)
from cisr.rng import UniformStream
from cisr.simulator import GOAL, TIMEOUT, UNSAFE

CFG = LanderConfig()


def flat():
    return Terrain(CFG, lambda: 0.0)


def test_side_trigger_examples():
    assert not trigger(LanderState(0.5, 0.2), 0.5)
    assert trigger(LanderState(0.5, 0.2), 20.0)


def test_stationary_over_pad_is_safe():
    assert not trigger(LanderState(0.0, 1.0), 0.5)


def test_pad_rescue():
    s = reset_rescue(LanderState(0.0, 0.5, 0.3, -0.4, 0.1, 0.2), 0.5, 1.0)
    assert (s.x, s.y) == (0.0, 0.4)
    assert s.x_dot == s.y_dot == s.alpha == s.alpha_dot == 0.0
    assert reset_rescue(LanderState(0.1, 0.05), 0.5, 1.0).y == 0.0


def test_side_rescue_unit_slope():
    x0, y0 = 0.6, 0.1
    s = reset_rescue(LanderState(x0, y0), 0.5, 1.0)
    assert abs(s.x - (x0 + y0 + 0.2) / 2) < 1e-12
    assert abs(s.y - (s.x - 0.2)) < 1e-12


def test_constants():
    ivs = build_lander_interventions()
    assert (ivs["Narrow"].steepness_a, ivs["Narrow"].reset_steepness_a_prime) == (20.0, 100.0)
    assert (ivs["Wide"].steepness_a, ivs["Wide"].reset_steepness_a_prime) == (0.5, 1.0)
    with pytest.raises(ConfigInvalid):
        FunnelIntervention("bad", 2.0, 1.0)


def test_free_fall_and_hover():
    s = LanderState(0.0, 1.0)
    s2, _, done, _ = step_lander(s, NOP, CFG, flat())
    assert not done and abs(s2.y_dot - (-CFG.gravity * CFG.dt)) < 1e-15
    hover = LanderConfig(main_thrust=CFG.gravity)
    s3, _, _, _ = step_lander(s, MAIN, hover, flat())
    assert s3.y_dot == 0.0


def test_scripted_episode_is_reproducible():
    def play():
        sim = LanderSimulator(CFG, build_lander_interventions()["Wide"])
        u = UniformStream(42)
        sim.reset(u)
        out = []
        for t in range(60):
            obs, r, done, *_ = sim.step((MAIN, NOP, NOP)[t % 3], u)
            out.append((obs, r, sim.state))
            if done:
                break
        return out
    assert play() == play()


def test_terrain_below_widest_funnel():
    u = UniformStream(0)
    for _ in range(20):
        t = Terrain(CFG, u)
        for x in np.linspace(0.2, 1.0, 33):
            assert t.height(x) < 0.5 * (x - 0.2) + 1e-12
            assert t.height(-x) < 0.5 * (x - 0.2) + 1e-12


def test_shaping_telescopes_through_rescue():
    iv = build_lander_interventions()["Wide"]
    sim = LanderSimulator(CFG, iv)
    u = UniformStream(3)
    sim.reset(u)
    start = sim.state
    total, done = 0.0, False
    while not done:
        _, r, done, _, _, _, code = sim.step(NOP, u)
        total += r
    end = sim.state
    term = {GOAL: CFG.reward_land, UNSAFE: CFG.crash_reward, TIMEOUT: CFG.timeout_reward}[code]
    assert abs(total - (potential(end, CFG) - potential(start, CFG) + term)) < 1e-9


def test_discretisation_range():
    d = Discretization()
    assert d.n_states == 17280
    assert d.index(LanderState(-5, -5, -5, -5, -5)) == 0
    assert d.index(LanderState(5, 5, 5, 5, 5)) == d.n_states - 1


def test_curriculum_env_and_episode_log():
    env = LanderCurriculumEnv()
    assert env.ids == ["Narrow", "Wide"] and env.n_actions == len(LANDER_ACTIONS)
    sim = env.deployment_sim(record=True)
    u = UniformStream(0)
    sim.reset(u)
    done = False
    while not done:
        done = sim.step(NOP, u)[2]
    assert sim.episode_csv().splitlines()[0] == "episode,outcome,return,triggers"
    assert len(sim.episode_csv().splitlines()) == 2
