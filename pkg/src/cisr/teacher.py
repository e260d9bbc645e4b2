"""Threshold-switching curriculum policies and the teacher's outer loop.

A curriculum policy holds ``K + 1`` interventions and ``K`` threshold pairs.
After each interaction unit the teacher evaluates the student in the CMDP it
just trained in; if the value estimate is at least ``omega[0]`` and the
trigger-violation gap is at most ``omega[1]``, it moves on to the next
intervention. Hence ``3K + 1`` parameters in all.
"""

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .bayesopt import Discrete, Interval, TeacherBO, UCBConfig, random_point
from .errors import StageOutOfRange, UnknownIntervention
from .rng import child_seed
from .simulator import TabularSimulator
from .student import deploy, evaluate_features, train_student

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CurriculumPolicyParams:
    intervention_sequence: tuple
    switch_thresholds: tuple

    def __post_init__(self):
        seq = tuple(self.intervention_sequence)
        thr = tuple((float(a), float(b)) for a, b in self.switch_thresholds)
        object.__setattr__(self, "intervention_sequence", seq)
        object.__setattr__(self, "switch_thresholds", thr)
        if len(seq) != len(thr) + 1:
            raise ValueError("need exactly one more intervention than threshold pairs")

    @property
    def K(self):
        return len(self.switch_thresholds)

    def to_vector(self, ids):
        """Flat ``3K + 1`` vector: intervention indices, then threshold pairs."""
        idx = [list(ids).index(i) for i in self.intervention_sequence]
        return np.array(idx + [v for pair in self.switch_thresholds for v in pair], dtype=float)

    @classmethod
    def from_vector(cls, vec, ids):
        vec = np.asarray(vec, dtype=float)
        if (len(vec) - 1) % 3:
            raise ValueError(f"vector of length {len(vec)} is not 3K+1")
        K = (len(vec) - 1) // 3
        ids = list(ids)
        seq = tuple(ids[int(np.clip(round(v), 0, len(ids) - 1))] for v in vec[: K + 1])
        rest = vec[K + 1:]
        return cls(seq, tuple((rest[2 * k], rest[2 * k + 1]) for k in range(K)))

    @classmethod
    def single(cls, intervention_id, K=0):
        return cls((intervention_id,) * (K + 1), ((np.inf, -np.inf),) * K)

    def describe(self):
        parts = [self.intervention_sequence[0]]
        for (r, g), nxt in zip(self.switch_thresholds, self.intervention_sequence[1:]):
            parts.append(f"[V>={r:.3g}, gap<={g:.3g}] {nxt}")
        return " -> ".join(parts)


@dataclass(frozen=True)
class CISRConfig:
    N_t: int = 20
    N_s: int = 11
    unit_steps: int = 10000
    K: int = 2
    eval_horizon: int = 10000
    R_max: float = 6.0
    horizon_T: int = 100
    n_init: int = 10
    eval_rollouts: int = 50
    students_per_datum: int = 1
    return_range: tuple = (-1.0, 6.0)
    gap_range: tuple = (-0.1, 1.0)
    initial_design: str = "random"  # or "combinations"
    kappa: float = 0.1

    def __post_init__(self):
        for name in ("N_t", "N_s", "unit_steps", "eval_horizon", "eval_rollouts",
                     "students_per_datum", "horizon_T"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.K < 0 or self.n_init < 0:
            raise ValueError("K and n_init must be nonnegative")


@dataclass
class RoundResult:
    params: CurriculumPolicyParams
    final_value: float
    observations: list
    training_failures: int
    switch_log: list
    deployment: object = None
    unit_deployments: list = field(default_factory=list)

    @property
    def success_rate(self):
        return self.deployment.success_rate if self.deployment is not None else float("nan")


class TabularCurriculumEnv:
    """A base CMDP plus a named library of interventions."""

    def __init__(self, base, interventions, r_max=None):
        self.base = base
        self.interventions = dict(interventions)
        self.ids = list(self.interventions)
        self.n_states, self.n_actions = base.n_states, base.n_actions
        self.horizon, self.kappa = base.horizon, base.kappa
        self.r_max = float(np.abs(base.reward).max()) if r_max is None else r_max
        self._sims = {}

    def training_sim(self, intervention_id):
        if intervention_id not in self._sims:
            if intervention_id is None:
                self._sims[None] = TabularSimulator(self.base)
            elif intervention_id in self.interventions:
                self._sims[intervention_id] = TabularSimulator(
                    self.base, self.interventions[intervention_id])
            else:
                raise UnknownIntervention(intervention_id)
        return self._sims[intervention_id]

    def deployment_sim(self):
        return self.training_sim(None)


def decide_intervention(params, stage, obs):
    """Apply the switching rule to the latest observation.

    Returns ``(intervention for the next unit, new stage)``. Comparisons are
    inclusive; at the last stage the rule never fires.
    """
    if not 0 <= stage <= params.K:
        raise StageOutOfRange(f"stage {stage} outside 0..{params.K}")
    if stage < params.K:
        ret_thr, gap_thr = params.switch_thresholds[stage]
        if obs.value_estimate >= ret_thr and obs.violation_gap <= gap_thr:
            stage += 1
    return params.intervention_sequence[stage], stage


def teacher_reward(final_eval, config):
    """The student's deployed return, or ``-2 T R_max`` if it broke the constraint.

    ``final_eval`` is a ``PolicyStats`` (exact) or ``DeploymentStats`` (sampled).
    """
    if hasattr(final_eval, "expected_return"):
        value, violations = final_eval.expected_return, final_eval.expected_unsafe_visits
    else:
        value, violations = final_eval.mean_return, final_eval.failure_rate
    if violations > config.kappa + 1e-12:
        if config.horizon_T == 0:
            log.warning("teacher penalty with zero horizon is degenerate")
        return -2.0 * config.horizon_T * config.R_max
    return float(value)


def run_round(params, env, config, solver_cfg, rng_seed, track_units=False):
    """Train one fresh student under ``params`` and score it in the original CMDP."""
    for i in params.intervention_sequence:
        if i not in env.ids:
            raise UnknownIntervention(i)
    state = None
    stage = 0
    current = params.intervention_sequence[0]
    switch_log = [(0, current)]
    observations, unit_deps = [], []
    failures = 0
    for n in range(config.N_s):
        sim = env.training_sim(current)
        state, stats = train_student(sim, config.unit_steps, solver_cfg, warm_start=state,
                                     rng_seed=child_seed(rng_seed, n, 0))
        failures += stats.training_failures
        obs = evaluate_features(state.policy, sim, config.eval_rollouts, child_seed(rng_seed, n, 1))
        observations.append(obs)
        if track_units:
            unit_deps.append(deploy(state.policy, env.deployment_sim(), config.eval_horizon,
                                    child_seed(rng_seed, n, 2)))
        if n + 1 < config.N_s:
            nxt, stage = decide_intervention(params, stage, obs)
            if nxt != current or len(switch_log) <= stage:
                switch_log.append((n + 1, nxt))
            current = nxt
    dep = deploy(state.policy, env.deployment_sim(), config.eval_horizon,
                 child_seed(rng_seed, config.N_s, 3))
    return RoundResult(params, teacher_reward(dep, config), observations, failures,
                       switch_log, dep, unit_deps)


def train_plain(env, config, solver_cfg, rng_seed, intervention_id=None, track_units=False):
    """A student trained for the full budget with a fixed intervention (or none)."""
    state, failures, unit_deps = None, 0, []
    sim = env.training_sim(intervention_id)
    for n in range(config.N_s):
        state, stats = train_student(sim, config.unit_steps, solver_cfg, warm_start=state,
                                     rng_seed=child_seed(rng_seed, n, 0))
        failures += stats.training_failures
        if track_units:
            unit_deps.append(deploy(state.policy, env.deployment_sim(), config.eval_horizon,
                                    child_seed(rng_seed, n, 2)))
    dep = deploy(state.policy, env.deployment_sim(), config.eval_horizon,
                 child_seed(rng_seed, config.N_s, 3))
    return RoundResult(None, teacher_reward(dep, config), [], failures,
                       [(0, intervention_id)], dep, unit_deps)


def parameter_space(env_ids, config):
    K = config.K
    space = [Discrete(len(env_ids)) for _ in range(K + 1)]
    for _ in range(K):
        space += [Interval(*config.return_range), Interval(*config.gap_range)]
    return space


def initial_design(env_ids, config, rng_seed):
    space = parameter_space(env_ids, config)
    if config.initial_design == "combinations":
        import itertools
        out = []
        for combo in itertools.product(range(len(env_ids)), repeat=config.K + 1):
            v = random_point(space, child_seed(rng_seed, len(out)))
            v[: config.K + 1] = combo
            out.append(v)
        return out
    return [random_point(space, child_seed(rng_seed, i)) for i in range(config.n_init)]


@dataclass
class TraceRow:
    round: int
    params: CurriculumPolicyParams
    vector: np.ndarray
    final_value: float
    training_failures: int
    success_rate: float
    phase: str


@dataclass
class OptimizationTrace:
    ids: list
    rows: list = field(default_factory=list)
    beta: float = 0.0
    bo: TeacherBO = None

    def best(self):
        i = int(np.argmax([r.final_value for r in self.rows]))
        return self.rows[i]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if not self.rows:
            return ""
        dim = len(self.rows[0].vector)
        w.writerow(["round", "phase"] + [f"p{d}" for d in range(dim)]
                   + ["policy", "final_value", "training_failures", "success_rate", "beta"])
        for r in self.rows:
            w.writerow([r.round, r.phase] + [repr(float(v)) for v in r.vector]
                       + [r.params.describe(), repr(float(r.final_value)), r.training_failures,
                          repr(float(r.success_rate)), repr(self.beta)])
        return buf.getvalue()


def evaluate_params(params, env, config, solver_cfg, rng_seed):
    """Mean teacher reward over ``students_per_datum`` students (one GP datum)."""
    results = [run_round(params, env, config, solver_cfg, child_seed(rng_seed, k))
               for k in range(config.students_per_datum)]
    return (float(np.mean([r.final_value for r in results])),
            int(sum(r.training_failures for r in results)),
            float(np.mean([r.success_rate for r in results])))


def cisr_optimize(env, config, solver_cfg, ucb=UCBConfig(), priors=None, rng_seed=0,
                  initial_params=None, progress=None):
    """Initial design followed by ``N_t`` GP-UCB rounds; returns (best params, trace)."""
    ids = env.ids
    space = parameter_space(ids, config)
    bo = TeacherBO(space, priors, ucb)
    trace = OptimizationTrace(list(ids), beta=ucb.beta, bo=bo)
    if initial_params is not None:
        init = [p.to_vector(ids) for p in initial_params]
    else:
        init = initial_design(ids, config, child_seed(rng_seed, 1))

    def record(vec, phase):
        j = len(trace.rows)
        params = CurriculumPolicyParams.from_vector(vec, ids)
        value, fails, succ = evaluate_params(params, env, config, solver_cfg, child_seed(rng_seed, 2, j))
        bo.observe(params.to_vector(ids) if phase != "ucb" else vec, value, rng_seed=child_seed(rng_seed, 3, j))
        trace.rows.append(TraceRow(j, params, np.asarray(vec, dtype=float), value, fails, succ, phase))
        if progress:
            progress(trace.rows[-1])

    for vec in init:
        record(vec, "init")
    for _ in range(config.N_t):
        vec = bo.propose(child_seed(rng_seed, 4, len(trace.rows)))
        vec[: config.K + 1] = np.round(vec[: config.K + 1])
        record(vec, "ucb")
    return trace.best().params, trace
