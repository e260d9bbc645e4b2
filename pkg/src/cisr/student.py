"""Online Lagrangian primal-dual student.

The primal step is a tabular softmax actor-critic on the scalarised reward
``r - sum_c lambda_c * [s' in C_c]`` with the multipliers held fixed. The dual
step is exponentiated gradient on the ``B``-scaled simplex, with an explicit
slack coordinate so the multipliers may sum to less than ``B``. One dual
update follows every primal epoch, driven by that epoch's empirical
per-episode constraint visits.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .cmdp import TabularPolicy
from .errors import BudgetZero, NegativeLambda, ZeroMassDegenerate
from .interventions import InducedCMDP
from .simulator import GOAL, HORIZON, TIMEOUT, TabularSimulator, policy_sampler, run_episode
from .rng import UniformStream


@dataclass(frozen=True)
class SolverConfig:
    eta: float = 1.0
    bound_B: float = 0.5
    primal_steps_per_epoch: int = 1000
    epochs_per_unit: int = 10
    learning_rate: float = 0.5
    actor_learning_rate: float = 3.0
    exploration_temperature: float = 1.0
    entropy_coef: float = 0.01
    initial_value: float = 0.0
    discount: float = 0.99
    eval_rollouts: int = 100

    def __post_init__(self):
        if self.eta <= 0 or self.bound_B <= 0:
            raise ValueError("eta and bound_B must be positive")
        if self.primal_steps_per_epoch < 1 or self.eval_rollouts < 1:
            raise ValueError("step and rollout counts must be positive")
        if self.learning_rate <= 0 or self.actor_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        if self.exploration_temperature <= 0:
            raise ValueError("exploration_temperature must be positive")


@dataclass
class LagrangeState:
    lambdas: np.ndarray
    names: tuple = ()

    @classmethod
    def uniform(cls, bound_B, names):
        n = len(names)
        return cls(np.full(n, bound_B / (n + 1)), tuple(names))


def dual_update_eg(state, violation_gaps, eta, bound_B):
    """One exponentiated-gradient step on the ``B``-scaled simplex.

    With slack weight ``w_0 = B - sum(lambda)`` and ``w_c = lambda_c * exp(eta * gap_c)``
    the update is ``lambda'_c = B * w_c / (w_0 + sum_j w_j)``. Computed in the
    log domain so large gaps do not overflow.
    """
    lam = np.asarray(state.lambdas, dtype=float)
    gaps = np.asarray(violation_gaps, dtype=float)
    if gaps.shape != lam.shape:
        raise ValueError(f"{len(gaps)} gaps for {len(lam)} multipliers")
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise NegativeLambda(f"corrupt multipliers {lam}")
    slack = bound_B - lam.sum()
    if slack < -1e-9 * max(1.0, bound_B):
        raise NegativeLambda(f"multipliers sum to {lam.sum()} > B={bound_B}")
    slack = max(slack, 0.0)
    with np.errstate(divide="ignore"):
        logw = np.concatenate(([math.log(slack) if slack > 0 else -np.inf],
                               np.log(lam) + eta * gaps))
    top = logw.max()
    if not np.isfinite(top):
        raise ZeroMassDegenerate("all simplex weights vanished")
    w = np.exp(logw - top)
    total = w.sum()
    new = bound_B * w[1:] / total
    # guard against rounding pushing the sum a hair above B
    s = new.sum()
    if s > bound_B:
        new *= bound_B / s
    return LagrangeState(new, state.names)


@dataclass
class StudentState:
    logits: np.ndarray
    value_table: np.ndarray
    lagrange: LagrangeState
    temperature: float = 1.0
    optimizer_scratch: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, n_states, n_actions, constraint_names, config):
        return cls(
            logits=np.zeros((n_states, n_actions)),
            value_table=np.full((n_states, n_actions), float(config.initial_value)),
            lagrange=LagrangeState.uniform(config.bound_B, constraint_names),
            temperature=config.exploration_temperature,
        )

    @property
    def policy(self):
        z = self.logits / self.temperature
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return TabularPolicy(p / p.sum(axis=1, keepdims=True))

    def copy(self):
        return StudentState(self.logits.copy(), self.value_table.copy(),
                            LagrangeState(self.lagrange.lambdas.copy(), self.lagrange.names),
                            self.temperature, dict(self.optimizer_scratch))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    steps: int
    episodes: int
    return_estimate: float
    violation_gaps: tuple
    lambdas: tuple
    training_failures_cumulative: int


@dataclass
class TrainingStats:
    constraint_names: tuple
    epochs: list = field(default_factory=list)
    training_failures: int = 0
    triggers: int = 0
    episodes_completed: int = 0
    successes: int = 0
    steps: int = 0

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = self.constraint_names
        w.writerow(["epoch", "return_estimate"]
                   + [f"violation_gap_{n}" for n in names]
                   + [f"lambda_{n}" for n in names]
                   + ["training_failures_cumulative"])
        for e in self.epochs:
            w.writerow([e.epoch, _fmt(e.return_estimate)]
                       + [_fmt(g) for g in e.violation_gaps]
                       + [_fmt(x) for x in e.lambdas]
                       + [e.training_failures_cumulative])
        return buf.getvalue()


def _fmt(x):
    return "nan" if x != x else repr(float(x))


def as_simulator(env):
    """Accept an :class:`InducedCMDP`, a bare ``TabularCMDP`` or a simulator."""
    if isinstance(env, InducedCMDP):
        return TabularSimulator(env.base, env.intervention)
    if hasattr(env, "step") and hasattr(env, "reset"):
        return env
    return TabularSimulator(env)


class _Learner:
    """Holds the simulator, random stream and episode position across epochs."""

    def __init__(self, sim, state, config, u):
        self.sim, self.state, self.config, self.u = sim, state, config, u
        self.obs = None
        self.ep_return = 0.0
        self.failures = 0

    def epoch(self, n_steps):
        sim, u, cfg = self.sim, self.u, self.config
        A = sim.n_actions
        theta = self.state.logits.tolist()
        Q = self.state.value_table.tolist()
        inv_t = 1.0 / self.state.temperature
        pi = [_softmax(row, inv_t) for row in theta]
        lam = tuple(float(x) for x in self.state.lagrange.lambdas)
        n_c = len(lam)
        alpha, beta = cfg.learning_rate, cfg.actor_learning_rate * inv_t
        gamma, ent = cfg.discount, cfg.entropy_coef
        visits = [0] * n_c
        episodes = 0
        returns = []
        failures = triggers = successes = 0
        s = self.obs
        ep_ret = self.ep_return
        if s is not None:
            episodes = 1
        log = math.log
        for _ in range(n_steps):
            while s is None:
                s, hits, done = sim.reset(u)
                episodes += 1
                ep_ret = 0.0
                for k in range(n_c):
                    visits[k] += hits[k]
                if hits[0]:
                    failures += 1
                if done:
                    returns.append(0.0)
                    s = None
            p = pi[s]
            x = u()
            a = 0
            c = p[0]
            while x >= c and a < A - 1:
                a += 1
                c += p[a]
            s2, r, done, hits, trig, failed, outcome = sim.step(a, u)
            ep_ret += r
            pen = 0.0
            for k in range(n_c):
                if hits[k]:
                    visits[k] += hits[k]
                    pen += lam[k] * hits[k]
            if failed:
                failures += 1
            if trig:
                triggers += 1
            if done and outcome != HORIZON and outcome != TIMEOUT:
                target = r - pen
            else:
                q2, p2 = Q[s2], pi[s2]
                v2 = 0.0
                for b in range(A):
                    v2 += p2[b] * q2[b]
                target = r - pen + gamma * v2
            q = Q[s]
            q[a] += alpha * (target - q[a])
            v = 0.0
            H = 0.0
            lp = [0.0] * A
            for b in range(A):
                pb = p[b]
                v += pb * q[b]
                if pb > 0.0:
                    lp[b] = log(pb)
                    H -= pb * lp[b]
            th = theta[s]
            for b in range(A):
                th[b] += beta * ((q[b] - v) - ent * (lp[b] + H))
            pi[s] = _softmax(th, inv_t)
            if done:
                returns.append(ep_ret)
                if outcome == GOAL:
                    successes += 1
                s = None
            else:
                s = s2
        self.obs, self.ep_return = s, ep_ret
        self.state.logits = np.array(theta)
        self.state.value_table = np.array(Q)
        episodes = max(episodes, 1)
        gaps = tuple(visits[k] / episodes - sim.tolerances[k] for k in range(n_c))
        ret = float(np.mean(returns)) if returns else float("nan")
        return {
            "gaps": gaps,
            "return": ret,
            "episodes": episodes,
            "completed": len(returns),
            "failures": failures,
            "triggers": triggers,
            "successes": successes,
        }


def _softmax(row, inv_t):
    m = max(row)
    e = [math.exp((x - m) * inv_t) for x in row]
    z = sum(e)
    return [x / z for x in e]


def primal_epoch(induced, state, config, rng_seed):
    """Run one epoch of actor-critic updates on ``state`` (mutated and returned)."""
    sim = as_simulator(induced)
    _Learner(sim, state, config, UniformStream(rng_seed)).epoch(config.primal_steps_per_epoch)
    return state


def _compatible(state, names, n_states, n_actions):
    return state.logits.shape == (n_states, n_actions)


def train_student(induced, budget_steps, config, warm_start=None, rng_seed=0):
    """Alternate primal epochs and EG dual updates for ``budget_steps`` steps.

    ``warm_start`` transfers logits and the value table (and the multipliers
    when the constraint layout matches); optimizer scratch is always reset.
    Returns ``(state, stats)``.
    """
    if budget_steps < 1:
        raise BudgetZero("budget_steps must be >= 1")
    sim = as_simulator(induced)
    names = sim.constraint_names
    if warm_start is None:
        state = StudentState.fresh(sim.n_states, sim.n_actions, names, config)
    else:
        if not _compatible(warm_start, names, sim.n_states, sim.n_actions):
            raise ValueError("warm start has the wrong table shape")
        lagrange = (LagrangeState(warm_start.lagrange.lambdas.copy(), names)
                    if warm_start.lagrange.names == names
                    else LagrangeState.uniform(config.bound_B, names))
        state = StudentState(warm_start.logits.copy(), warm_start.value_table.copy(),
                             lagrange, config.exploration_temperature, {})
    stats = TrainingStats(constraint_names=names)
    learner = _Learner(sim, state, config, UniformStream(rng_seed))
    remaining, epoch = budget_steps, 0
    while remaining > 0:
        n = min(config.primal_steps_per_epoch, remaining)
        out = learner.epoch(n)
        remaining -= n
        state.lagrange = dual_update_eg(state.lagrange, out["gaps"], config.eta, config.bound_B)
        stats.training_failures += out["failures"]
        stats.triggers += out["triggers"]
        stats.episodes_completed += out["completed"]
        stats.successes += out["successes"]
        stats.steps += n
        stats.epochs.append(EpochRecord(
            epoch=epoch,
            steps=n,
            episodes=out["episodes"],
            return_estimate=out["return"],
            violation_gaps=out["gaps"],
            lambdas=tuple(float(x) for x in state.lagrange.lambdas),
            training_failures_cumulative=stats.training_failures,
        ))
        epoch += 1
    state.optimizer_scratch = {}
    return state, stats


@dataclass(frozen=True)
class TeacherObservation:
    value_estimate: float
    violation_gap: float

    def as_tuple(self):
        return (self.value_estimate, self.violation_gap)


def evaluate_features(policy, induced, n_rollouts, rng_seed):
    """Teacher features ``[V_hat, mean trigger visits - tau]`` from seeded rollouts.

    Without an intervention the unsafe set plays the role of the trigger set.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    sim = as_simulator(induced)
    k = len(sim.constraint_names) - 1
    cum_pi = policy_sampler(policy.action_probs)
    u = UniformStream(rng_seed)
    total, visits = 0.0, 0
    for _ in range(n_rollouts):
        ret, v, _, _ = run_episode(sim, cum_pi, u)
        total += ret
        visits += v[k]
    return TeacherObservation(total / n_rollouts, visits / n_rollouts - sim.tolerances[k])


@dataclass(frozen=True)
class DeploymentStats:
    mean_return: float
    success_rate: float
    failure_rate: float
    episodes: int
    failures: int
    successes: int
    steps: int
    outcomes: dict = field(default_factory=dict)


def deploy(policy, sim, n_steps, rng_seed):
    """Run whole episodes in ``sim`` until ``n_steps`` student steps are used.

    The episode that crosses the budget is completed and counted.
    """
    cum_pi = policy_sampler(policy.action_probs)
    u = UniformStream(rng_seed)
    used = episodes = failures = successes = 0
    total = 0.0
    outcomes = {}
    while used < n_steps:
        ret, visits, outcome, n = run_episode(sim, cum_pi, u)
        used += max(n, 1)
        episodes += 1
        total += ret
        failures += int(visits[0] > 0)
        successes += int(outcome == GOAL)
        outcomes[outcome] = outcomes.get(outcome, 0) + 1
    return DeploymentStats(total / episodes, successes / episodes, failures / episodes,
                           episodes, failures, successes, used, outcomes)
