"""A simplified two-dimensional lander with funnel-shaped teacher interventions.

The craft is a point mass with a tilt angle. Physics constants are our own
(this is not a rigid-body engine); the trigger and rescue geometry and the
reward, cost and timeout constants follow the lander experiment exactly.

Coordinates: ``x`` in ``[-1, 1]`` with the landing pad on ``[-0.2, 0.2]`` at
height 0, ``y`` upwards. Outside the pad the ground is a seeded
piecewise-linear surface that stays below every funnel, so the only way to
hit it is to descend through a trigger region first.
"""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalid, GeometryDegenerate, UnknownIntervention
from .simulator import GOAL, RUNNING, TIMEOUT, UNSAFE

NOP, MAIN, LEFT, RIGHT = 0, 1, 2, 3
LANDER_ACTIONS = ("nop", "main", "left", "right")
LANDED, CRASHED, OUT_OF_MAP, TIMED_OUT = "landed", "crashed", "out_of_map", "timeout"


@dataclass(frozen=True)
class LanderState:
    x: float
    y: float
    x_dot: float = 0.0
    y_dot: float = 0.0
    alpha: float = 0.0
    alpha_dot: float = 0.0
    leg_contact_left: bool = False
    leg_contact_right: bool = False

    def __post_init__(self):
        for name in ("x", "y", "x_dot", "y_dot", "alpha", "alpha_dot"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class FunnelIntervention:
    name: str
    steepness_a: float
    reset_steepness_a_prime: float
    tau: float = 0.0
    kappa_i: float = 0.0

    def __post_init__(self):
        if not self.reset_steepness_a_prime > self.steepness_a > 0:
            raise ConfigInvalid("steepness", "need a' > a > 0")


@dataclass(frozen=True)
class LanderConfig:
    pad: tuple = (-0.2, 0.2)
    gravity: float = 1.0
    main_thrust: float = 2.0
    side_thrust: float = 0.4
    side_torque: float = 3.0
    angular_damping: float = 0.5
    dt: float = 0.05
    start_height: float = 1.4
    start_velocity_noise: float = 0.2
    landing_speed: float = 0.5
    landing_tilt: float = 0.4
    reward_land: float = 100.0
    cost_main: float = 0.3
    cost_side: float = 0.03
    timeout_train: int = 500
    timeout_deploy: int = 2000
    timeout_reward: float = -100.0
    crash_reward: float = -100.0
    shaping_scale: float = 10.0
    kappa: float = 0.0
    absolute_pad_trigger: bool = False  # use |y_dot| and |alpha| in the pad trigger
    terrain_knots: int = 9

    def __post_init__(self):
        if self.timeout_train < 1 or self.timeout_deploy < 1:
            raise ConfigInvalid("timeout", "timeouts must be >= 1")
        if self.dt <= 0:
            raise ConfigInvalid("dt", "must be positive")


def build_lander_interventions(tau=0.0):
    """The two funnels: Narrow hugs the pad, Wide leaves a broad approach."""
    return {
        "Narrow": FunnelIntervention("Narrow", 20.0, 100.0, tau),
        "Wide": FunnelIntervention("Wide", 0.5, 1.0, tau),
    }


def trigger(state, a, pad=(-0.2, 0.2), absolute=False):
    """Whether the funnel with steepness ``a`` fires in ``state``."""
    lo, hi = pad
    x, y = state.x, state.y
    if lo <= x <= hi:
        vy = abs(state.y_dot) if absolute else state.y_dot
        al = abs(state.alpha) if absolute else state.alpha
        return vy >= 0.3 + 10.0 * y or al >= 0.5 + 10.0 * y
    if x < lo:
        return y <= a * (lo - x)
    return y <= a * (x - hi)


def reset_rescue(state, a, a_prime, pad=(-0.2, 0.2)):
    """Move a triggering craft to a safe, motionless state.

    Over the pad it is lowered by 0.1 (not below the pad). To the side it
    slides along the line of slope -1 (mirrored on the left) through its
    position until it meets the steeper line ``y = a'(x - 0.2)``.
    """
    lo, hi = pad
    x0, y0 = state.x, state.y
    if lo <= x0 <= hi:
        x1, y1 = x0, max(y0 - 0.1, 0.0)
    elif x0 > hi:
        if a_prime == -1.0:
            raise GeometryDegenerate("reset line parallel to the slide line")
        x1 = (x0 + y0 + hi * a_prime) / (a_prime + 1.0)
        y1 = a_prime * (x1 - hi)
    else:
        if a_prime == -1.0:
            raise GeometryDegenerate("reset line parallel to the slide line")
        x1 = (x0 - y0 + lo * a_prime) / (1.0 + a_prime)
        y1 = a_prime * (lo - x1)
    return LanderState(x1, y1)


class Terrain:
    """Flat pad plus a piecewise-linear surface below the widest funnel."""

    def __init__(self, config, u, max_slope=0.5):
        lo, hi = config.pad
        n = config.terrain_knots
        self.lo, self.hi = lo, hi
        self.right_x = np.linspace(hi, 1.0, n)
        self.left_x = np.linspace(-1.0, lo, n)
        cap_r = 0.9 * max_slope * (self.right_x - hi)
        cap_l = 0.9 * max_slope * (lo - self.left_x)
        self.right_y = np.array([u() * c for c in cap_r])
        self.left_y = np.array([u() * c for c in cap_l])

    def height(self, x):
        if self.lo <= x <= self.hi:
            return 0.0
        if x > self.hi:
            return float(np.interp(x, self.right_x, self.right_y))
        return float(np.interp(x, self.left_x, self.left_y))


def potential(state, config):
    """Shaping potential: closer, slower, more upright and touching down is better."""
    k = config.shaping_scale
    return (-k * math.hypot(state.x, state.y)
            - k * math.hypot(state.x_dot, state.y_dot)
            - k * abs(state.alpha)
            + 0.1 * k * (state.leg_contact_left + state.leg_contact_right))


def step_lander(state, action, config, terrain):
    """Advance one tick. Returns ``(state', reward, done, outcome)``.

    The reward is the engine cost plus the shaping difference plus, on
    termination, the landing or crash reward. Given the terrain the dynamics
    are deterministic; all randomness lives in the episode reset.
    """
    dt = config.dt
    ax, ay, torque = 0.0, -config.gravity, 0.0
    cost = 0.0
    if action == MAIN:
        ax += -config.main_thrust * math.sin(state.alpha)
        ay += config.main_thrust * math.cos(state.alpha)
        cost = config.cost_main
    elif action == LEFT:
        torque = config.side_torque
        ax -= config.side_thrust
        cost = config.cost_side
    elif action == RIGHT:
        torque = -config.side_torque
        ax += config.side_thrust
        cost = config.cost_side
    vx = state.x_dot + ax * dt
    vy = state.y_dot + ay * dt
    w = (state.alpha_dot + torque * dt) * (1.0 - config.angular_damping * dt)
    x = state.x + vx * dt
    y = state.y + vy * dt
    alpha = state.alpha + w * dt
    ground = terrain.height(x)
    lo, hi = config.pad
    done, outcome, terminal_r = False, None, 0.0
    legs = (False, False)
    if abs(x) > 1.0:
        done, outcome, terminal_r = True, OUT_OF_MAP, config.crash_reward
    elif y <= ground:
        y = ground
        soft = abs(vy) <= config.landing_speed and abs(alpha) <= config.landing_tilt
        if lo <= x <= hi and soft:
            done, outcome, terminal_r = True, LANDED, config.reward_land
            legs = (True, True)
        else:
            done, outcome, terminal_r = True, CRASHED, config.crash_reward
        vx = vy = w = 0.0
    new = LanderState(x, y, vx, vy, alpha, w, *legs)
    r = -cost + potential(new, config) - potential(state, config) + terminal_r
    return new, r, done, outcome


@dataclass(frozen=True)
class Discretization:
    x_bins: int = 12
    y_bins: int = 10
    y_dot_bins: int = 8
    alpha_bins: int = 6
    x_dot_bins: int = 3
    y_max: float = 1.6
    y_dot_range: tuple = (-1.6, 0.6)
    alpha_range: tuple = (-0.6, 0.6)
    x_dot_range: tuple = (-0.3, 0.3)

    @property
    def n_states(self):
        return self.x_bins * self.y_bins * self.y_dot_bins * self.alpha_bins * self.x_dot_bins

    def index(self, s):
        def b(v, lo, hi, n):
            k = int((v - lo) / (hi - lo) * n)
            return 0 if k < 0 else (n - 1 if k >= n else k)
        i = b(s.x, -1.0, 1.0, self.x_bins)
        i = i * self.y_bins + b(s.y, 0.0, self.y_max, self.y_bins)
        i = i * self.y_dot_bins + b(s.y_dot, *self.y_dot_range, self.y_dot_bins)
        i = i * self.alpha_bins + b(s.alpha, *self.alpha_range, self.alpha_bins)
        return i * self.x_dot_bins + b(s.x_dot, *self.x_dot_range, self.x_dot_bins)


_OUTCOME_CODE = {LANDED: GOAL, CRASHED: UNSAFE, OUT_OF_MAP: UNSAFE}


class LanderSimulator:
    """Discretised lander with the same step/reset interface as ``TabularSimulator``.

    ``horizon`` is the timeout (training or deployment). Reaching it ends the
    episode with ``timeout_reward``. A funnel rescue consumes one extra tick.
    """

    def __init__(self, config=LanderConfig(), intervention=None, deploy=False,
                 discretization=Discretization(), record=False):
        self.config = config
        self.intervention = intervention
        self.disc = discretization
        self.n_states = discretization.n_states
        self.n_actions = len(LANDER_ACTIONS)
        self.horizon = config.timeout_deploy if deploy else config.timeout_train
        if intervention is None:
            self.constraint_names = ("unsafe",)
            self.tolerances = (config.kappa,)
        else:
            self.constraint_names = ("unsafe", "trigger")
            self.tolerances = (intervention.kappa_i, intervention.tau)
        self.record = record
        self.log = []
        self._episode = -1
        self._ep_ret = 0.0
        self._ep_trig = 0
        self.state = None
        self.terrain = None
        self.t = 0

    def _hits(self, unsafe, trig):
        return (int(unsafe),) if self.intervention is None else (int(unsafe), int(trig))

    def reset(self, u):
        cfg = self.config
        self.terrain = Terrain(cfg, u)
        nz = cfg.start_velocity_noise
        self.state = LanderState(0.0, cfg.start_height, (2 * u() - 1) * nz, (2 * u() - 1) * nz)
        self.t = 0
        self._episode += 1
        self._ep_ret, self._ep_trig = 0.0, 0
        return self.disc.index(self.state), self._hits(False, False), False

    def _triggered(self, s):
        iv = self.intervention
        return iv is not None and trigger(s, iv.steepness_a, self.config.pad,
                                          self.config.absolute_pad_trigger)

    def step(self, a, u):
        cfg = self.config
        s2, r, done, outcome = step_lander(self.state, a, cfg, self.terrain)
        self.t += 1
        trig = False
        if not done and self._triggered(s2):
            trig = True
            iv = self.intervention
            rescued = reset_rescue(s2, iv.steepness_a, iv.reset_steepness_a_prime, cfg.pad)
            r += potential(rescued, cfg) - potential(s2, cfg)  # keeps the shaping telescoping
            s2 = rescued
            self.t += 1
        self.state = s2
        code = RUNNING
        if done:
            code = _OUTCOME_CODE[outcome]
        elif self.t >= self.horizon:
            done, code, outcome = True, TIMEOUT, TIMED_OUT
            r += cfg.timeout_reward
        failed = code == UNSAFE
        hits = self._hits(failed, trig)
        self._ep_ret += r
        self._ep_trig += trig
        if done and self.record:
            self.log.append((self._episode, outcome, self._ep_ret, self._ep_trig))
        return self.disc.index(s2), r, done, hits, trig, failed, code

    def episode_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "outcome", "return", "triggers"])
        for ep, outcome, ret, trig in self.log:
            w.writerow([ep, outcome, repr(float(ret)), trig])
        return buf.getvalue()


class LanderCurriculumEnv:
    """Funnel interventions over the lander, usable wherever a curriculum env is expected."""

    def __init__(self, config=LanderConfig(), interventions=None,
                 discretization=Discretization(), r_max=None):
        self.config = config
        self.disc = discretization
        self.interventions = dict(interventions or build_lander_interventions())
        self.ids = list(self.interventions)
        self.n_states, self.n_actions = discretization.n_states, len(LANDER_ACTIONS)
        self.kappa = config.kappa
        self.r_max = config.reward_land if r_max is None else r_max
        self._sims = {}

    def training_sim(self, intervention_id):
        if intervention_id not in self._sims:
            iv = None if intervention_id is None else self.interventions.get(intervention_id)
            if intervention_id is not None and iv is None:
                raise UnknownIntervention(intervention_id)
            self._sims[intervention_id] = LanderSimulator(self.config, iv, False, self.disc)
        return self._sims[intervention_id]

    def deployment_sim(self, record=False):
        if record:
            return LanderSimulator(self.config, None, True, self.disc, record=True)
        if "deploy" not in self._sims:
            self._sims["deploy"] = LanderSimulator(self.config, None, True, self.disc)
        return self._sims["deploy"]
