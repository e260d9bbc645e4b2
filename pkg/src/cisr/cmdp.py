"""Finite-horizon tabular constrained MDPs.

A CMDP here is ``<S, A, P, r, D>`` with an initial distribution, a horizon
``T`` and a tolerance ``kappa`` on the expected number of visits to the
unsafe set ``D`` over ``s_0 .. s_T``. Terminal states (unsafe and goal) end
the episode: mass that enters one is counted once at the step it arrives and
then leaves the chain, which is the same as an absorbing zero-reward
self-loop for returns but keeps visit counts bounded by one.

Evaluation is exact: returns by backward induction over the policy-induced
chain, visits by forward propagation of time-indexed occupancy.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonStochasticRow, UnsafeNotTerminal
from .rng import UniformStream

ROW_TOL = 1e-9
FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True)
class ConstraintSet:
    """A state set whose expected visit count is bounded by ``tolerance``."""

    name: str
    states: frozenset
    tolerance: float


@dataclass(frozen=True, eq=False)
class TabularCMDP:
    n_states: int
    n_actions: int
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A, S)
    unsafe_set: frozenset
    initial_dist: np.ndarray
    horizon: int
    kappa: float
    terminal_set: frozenset
    aux_constraints: tuple = ()
    labels: tuple = field(default=())

    def __post_init__(self):
        S, A = self.n_states, self.n_actions
        if self.transition.shape != (S, A, S) or self.reward.shape != (S, A, S):
            raise DimensionMismatch(
                f"expected tensors of shape {(S, A, S)}, got "
                f"{self.transition.shape} and {self.reward.shape}"
            )
        if self.initial_dist.shape != (S,):
            raise DimensionMismatch(f"initial_dist has shape {self.initial_dist.shape}")
        if np.any(self.transition < 0):
            raise NonStochasticRow("negative transition probability")
        sums = self.transition.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > ROW_TOL)
        if len(bad):
            s, a = bad[0]
            raise NonStochasticRow(f"row (s={s}, a={a}) sums to {sums[s, a]!r}")
        if np.any(self.initial_dist < 0) or abs(self.initial_dist.sum() - 1.0) > ROW_TOL:
            raise NonStochasticRow("initial_dist is not a probability vector")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        for group in (self.unsafe_set, self.terminal_set,
                      *(c.states for c in self.aux_constraints)):
            if any(not 0 <= s < S for s in group):
                raise DimensionMismatch("state id out of range")
        for arr in (self.transition, self.reward, self.initial_dist):
            arr.setflags(write=False)

    @property
    def constraint_sets(self):
        """The unsafe-set constraint followed by any auxiliary constraints."""
        return (ConstraintSet("unsafe", self.unsafe_set, self.kappa),) + tuple(self.aux_constraints)

    @property
    def goal_set(self):
        return self.terminal_set - self.unsafe_set

    def mask(self, states):
        m = np.zeros(self.n_states, dtype=bool)
        m[list(states)] = True
        return m


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    action_probs: np.ndarray  # (S, A)

    def __post_init__(self):
        p = self.action_probs
        if p.ndim != 2:
            raise DimensionMismatch("action_probs must be a matrix")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > ROW_TOL):
            raise NonStochasticRow("policy rows must be probability vectors")

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions):
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((len(actions), n_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)


@dataclass(frozen=True)
class Step:
    state: int
    action: int
    next_state: int
    reward: float
    intervention_triggered: bool = False


@dataclass(frozen=True)
class Trajectory:
    steps: tuple
    terminated_by: str  # goal | unsafe | timeout | horizon

    def __len__(self):
        return len(self.steps)

    @property
    def total_reward(self):
        return sum(st.reward for st in self.steps)


@dataclass(frozen=True)
class PolicyStats:
    expected_return: float
    expected_unsafe_visits: float
    expected_trigger_visits: tuple = ()


def build_cmdp(spec):
    """Validate a CMDP description and return a :class:`TabularCMDP`.

    ``spec`` is a mapping with ``n_states``, ``n_actions``, ``horizon``,
    ``kappa``, ``unsafe``, ``terminal``, ``initial`` (dense vector or
    ``{state: prob}``), and either dense ``transition``/``reward`` arrays or a
    sparse ``transitions`` list of ``[s, a, s2, prob]`` or
    ``[s, a, s2, prob, reward]``. Unnormalised rows are rejected.
    """
    S, A = int(spec["n_states"]), int(spec["n_actions"])
    if "transition" in spec:
        P = np.array(spec["transition"], dtype=float)
        R = np.array(spec.get("reward", np.zeros_like(P)), dtype=float)
        if P.shape != (S, A, S):
            raise DimensionMismatch(f"transition shape {P.shape} != {(S, A, S)}")
    else:
        P = np.zeros((S, A, S))
        R = np.zeros((S, A, S))
        for entry in spec["transitions"]:
            s, a, s2, p = int(entry[0]), int(entry[1]), int(entry[2]), float(entry[3])
            if not (0 <= s < S and 0 <= a < A and 0 <= s2 < S):
                raise DimensionMismatch(f"transition entry {entry} out of range")
            P[s, a, s2] += p
            if len(entry) > 4:
                R[s, a, s2] = float(entry[4])
    init = spec.get("initial", {0: 1.0})
    if isinstance(init, dict):
        mu = np.zeros(S)
        for s, p in init.items():
            mu[int(s)] = float(p)
    else:
        mu = np.array(init, dtype=float)
        if mu.shape != (S,):
            raise DimensionMismatch(f"initial has shape {mu.shape}")
    unsafe = frozenset(int(s) for s in spec.get("unsafe", ()))
    terminal = frozenset(int(s) for s in spec.get("terminal", ())) | frozenset()
    if not unsafe <= terminal:
        raise UnsafeNotTerminal(f"unsafe states {sorted(unsafe - terminal)} are not terminal")
    return TabularCMDP(
        n_states=S,
        n_actions=A,
        transition=P,
        reward=R,
        unsafe_set=unsafe,
        initial_dist=mu,
        horizon=int(spec["horizon"]),
        kappa=float(spec.get("kappa", 0.0)),
        terminal_set=terminal,
        labels=tuple(spec.get("labels", ())),
    )


def _check_dims(cmdp, policy):
    if policy.action_probs.shape != (cmdp.n_states, cmdp.n_actions):
        raise DimensionMismatch(
            f"policy shape {policy.action_probs.shape} does not match "
            f"CMDP ({cmdp.n_states}, {cmdp.n_actions})"
        )


def policy_chain(cmdp, policy):
    """Return the policy-induced transition matrix and expected one-step reward."""
    _check_dims(cmdp, policy)
    pi = policy.action_probs
    P_pi = np.einsum("sa,sat->st", pi, cmdp.transition)
    r_pi = np.einsum("sa,sat,sat->s", pi, cmdp.transition, cmdp.reward)
    return P_pi, r_pi


def exact_expected_return(cmdp, policy):
    """Expected undiscounted return over the horizon, by backward induction."""
    P_pi, r_pi = policy_chain(cmdp, policy)
    live = ~cmdp.mask(cmdp.terminal_set)
    V = np.zeros(cmdp.n_states)
    for _ in range(cmdp.horizon):
        V = np.where(live, r_pi + P_pi @ V, 0.0)
    return float(cmdp.initial_dist @ V)


def occupancy(cmdp, policy):
    """Time-indexed state occupancy ``d[t, s]`` for ``t = 0 .. T``.

    Row ``t`` sums to the probability that the episode has not ended before
    ``t``; terminal states hold mass only at the step they are entered.
    """
    P_pi, _ = policy_chain(cmdp, policy)
    live = (~cmdp.mask(cmdp.terminal_set)).astype(float)
    d = np.empty((cmdp.horizon + 1, cmdp.n_states))
    d[0] = cmdp.initial_dist
    for t in range(cmdp.horizon):
        d[t + 1] = (d[t] * live) @ P_pi
    return d


def exact_expected_visits(cmdp, policy, target_set):
    """Expected number of ``t in 0..T`` with ``s_t`` in ``target_set``."""
    target = list(target_set)
    if any(not 0 <= s < cmdp.n_states for s in target):
        raise DimensionMismatch("target_set contains out-of-range state ids")
    d = occupancy(cmdp, policy)
    if not target:
        return 0.0
    return float(d[:, target].sum())


def is_feasible(cmdp, policy, tol=FEASIBILITY_TOL):
    return exact_expected_visits(cmdp, policy, cmdp.unsafe_set) <= cmdp.kappa + tol


def policy_stats(cmdp, policy, extra_sets=()):
    return PolicyStats(
        expected_return=exact_expected_return(cmdp, policy),
        expected_unsafe_visits=exact_expected_visits(cmdp, policy, cmdp.unsafe_set),
        expected_trigger_visits=tuple(exact_expected_visits(cmdp, policy, s) for s in extra_sets),
    )


def cumulative_rows(cmdp):
    """Per-(s, a) cumulative next-state distributions as Python lists (for sampling)."""
    cum = np.cumsum(cmdp.transition, axis=2)
    cum[..., -1] = 1.0
    return cum.tolist()


def sample_index(cum, u):
    lo, hi = 0, len(cum) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if u < cum[mid]:
            hi = mid
        else:
            lo = mid + 1
    return lo


def rollout(cmdp, policy, rng_seed, trigger_set=frozenset()):
    """Sample one episode; identical seeds give identical trajectories.

    ``trigger_set`` only marks steps whose next state lies in it (the
    dynamics are whatever ``cmdp`` already encodes).
    """
    _check_dims(cmdp, policy)
    u = UniformStream(rng_seed)
    cum_p = cumulative_rows(cmdp)
    cum_pi = np.cumsum(policy.action_probs, axis=1).tolist()
    init = np.cumsum(cmdp.initial_dist).tolist()
    R = cmdp.reward
    s = sample_index(init, u())
    steps = []
    if s in cmdp.unsafe_set:
        return Trajectory((), "unsafe")
    if s in cmdp.terminal_set:
        return Trajectory((), "goal")
    for _ in range(cmdp.horizon):
        a = sample_index(cum_pi[s], u())
        s2 = sample_index(cum_p[s][a], u())
        steps.append(Step(s, a, s2, float(R[s, a, s2]), s2 in trigger_set))
        if s2 in cmdp.unsafe_set:
            return Trajectory(tuple(steps), "unsafe")
        if s2 in cmdp.terminal_set:
            return Trajectory(tuple(steps), "goal")
        s = s2
    return Trajectory(tuple(steps), "horizon")


def dumps(cmdp):
    """Serialise to a JSON document with sparse transition entries."""
    P, R = cmdp.transition, cmdp.reward
    entries = []
    for s, a, s2 in zip(*np.nonzero(P)):
        entries.append([int(s), int(a), int(s2), float(P[s, a, s2]), float(R[s, a, s2])])
    doc = {
        "n_states": cmdp.n_states,
        "n_actions": cmdp.n_actions,
        "horizon": cmdp.horizon,
        "kappa": cmdp.kappa,
        "unsafe": sorted(cmdp.unsafe_set),
        "terminal": sorted(cmdp.terminal_set),
        "initial": {str(s): float(p) for s, p in enumerate(cmdp.initial_dist) if p > 0},
        "labels": list(cmdp.labels),
        "transitions": entries,
    }
    return json.dumps(doc, indent=1)


def loads(text):
    return build_cmdp(json.loads(text))
