"""Brute-force ground truth for small tabular CMDPs.

Every deterministic policy is enumerated and scored by a batched forward
pass that is written independently of ``cmdp.exact_expected_return`` so the
two can check each other. Policies are indexed by their actions on the
*decision states* (non-terminal states whose rows differ between actions),
read as base-``|A|`` digits with the lowest state most significant; all
other states take action 0. Index 0 is therefore "action 0 everywhere".
"""

from dataclasses import dataclass, field

import numpy as np

from .cmdp import TabularPolicy
from .errors import BudgetExceeded, NoFeasible
from .interventions import check_eventual_safety, check_learning_safety, induce

TOL = 1e-10
CHUNK = 4096


@dataclass(frozen=True)
class EnumerationBudget:
    max_policies: int = 10**7

    def __post_init__(self):
        if self.max_policies <= 0:
            raise ValueError("max_policies must be positive")


@dataclass
class PropositionReport:
    proposition: str  # "eventual_safety" or "learning_safety"
    policies_checked: int
    counterexamples: list = field(default_factory=list)
    vacuous: bool = False
    premise_holds: bool = True
    feasible_in_induced: int = 0
    random_checked: int = 0

    @property
    def verified(self):
        return not self.counterexamples

    def summary(self):
        status = "verified" if self.verified else f"{len(self.counterexamples)} counterexample(s)"
        extra = " (premise unmet, vacuous)" if self.vacuous else ""
        return (f"{self.proposition}: {status}{extra}; {self.policies_checked} deterministic"
                f" + {self.random_checked} random policies checked")


def decision_states(cmdp):
    """Non-terminal states where the chosen action changes the next-step law."""
    out = []
    for s in range(cmdp.n_states):
        if s in cmdp.terminal_set:
            continue
        P, R = cmdp.transition[s], cmdp.reward[s]
        if np.any(np.abs(P - P[0]) > 0) or np.any(np.abs((P * R) - (P[0] * R[0])) > 0):
            out.append(s)
    return out


def policy_count(cmdp, states=None):
    states = decision_states(cmdp) if states is None else states
    return cmdp.n_actions ** len(states)


def decode_policies(indices, n_actions, states, n_states):
    """Action tables ``(len(indices), n_states)`` for a batch of policy indices."""
    idx = np.asarray(indices, dtype=np.int64)
    acts = np.zeros((len(idx), n_states), dtype=np.int64)
    rem = idx.copy()
    for s in reversed(states):
        acts[:, s] = rem % n_actions
        rem //= n_actions
    return acts


def _sa_reward(cmdp):
    return np.einsum("sat,sat->sa", cmdp.transition, cmdp.reward)


def _forward(cmdp, P_pi, r_pi, sets):
    """Batched return and per-set visit counts for chains ``P_pi`` (N, S, S)."""
    N = len(P_pi)
    live = np.ones(cmdp.n_states)
    live[list(cmdp.terminal_set)] = 0.0
    d = np.tile(cmdp.initial_dist, (N, 1))
    masks = [np.isin(np.arange(cmdp.n_states), list(X)).astype(float) for X in sets]
    visits = np.zeros((N, len(sets)))
    ret = np.zeros(N)
    for _ in range(cmdp.horizon):
        for k, m in enumerate(masks):
            visits[:, k] += d @ m
        dl = d * live
        ret += np.einsum("ns,ns->n", dl, r_pi)
        d = np.einsum("ns,nst->nt", dl, P_pi)
    for k, m in enumerate(masks):
        visits[:, k] += d @ m
    return ret, visits


def deterministic_stats(cmdp, actions, sets):
    """Return and visits for a batch of deterministic action tables."""
    S = cmdp.n_states
    rows = np.arange(S)
    P_pi = cmdp.transition[rows[None, :], actions]
    r_pi = _sa_reward(cmdp)[rows[None, :], actions]
    return _forward(cmdp, P_pi, r_pi, sets)


def stochastic_stats(cmdp, probs, sets):
    """Return and visits for a batch of stochastic policies ``(N, S, A)``."""
    P_pi = np.einsum("nsa,sat->nst", probs, cmdp.transition)
    r_pi = np.einsum("nsa,sa->ns", probs, _sa_reward(cmdp))
    return _forward(cmdp, P_pi, r_pi, sets)


def enumerate_policy_stats(cmdp, extra_sets=(), budget=EnumerationBudget(), states=None):
    """Yield ``(index, actions, return, unsafe visits, extra-set visits)`` for every policy."""
    states = decision_states(cmdp) if states is None else list(states)
    sets = [cmdp.unsafe_set] + [frozenset(X) for X in extra_sets]
    for idx, acts, (ret, vis) in _batches(cmdp, states, budget, sets):
        for j, i in enumerate(idx):
            yield int(i), acts[j], float(ret[j]), float(vis[j, 0]), tuple(float(v) for v in vis[j, 1:])


def _batches(cmdp, states, budget, sets):
    total = cmdp.n_actions ** len(states)
    if total > budget.max_policies:
        raise BudgetExceeded(f"{total} policies exceed the budget of {budget.max_policies}")
    for start in range(0, total, CHUNK):
        idx = np.arange(start, min(total, start + CHUNK))
        acts = decode_policies(idx, cmdp.n_actions, states, cmdp.n_states)
        yield idx, acts, deterministic_stats(cmdp, acts, sets)


def tree_stats(cmdp, actions, sets=()):
    """Exact return and visits by expanding every trajectory (small horizons only)."""
    sets = [cmdp.unsafe_set] + [frozenset(X) for X in sets]
    P, R = cmdp.transition, cmdp.reward

    def expand(s, t):
        vis = np.array([1.0 if s in X else 0.0 for X in sets])
        if s in cmdp.terminal_set or t == cmdp.horizon:
            return 0.0, vis
        a = int(actions[s])
        ret = 0.0
        for s2 in np.nonzero(P[s, a])[0]:
            p = P[s, a, s2]
            r2, v2 = expand(int(s2), t + 1)
            ret += p * (R[s, a, s2] + r2)
            vis = vis + p * v2
        return ret, vis

    ret, vis = 0.0, np.zeros(len(sets))
    for s0 in np.nonzero(cmdp.initial_dist)[0]:
        r0, v0 = expand(int(s0), 0)
        ret += cmdp.initial_dist[s0] * r0
        vis = vis + cmdp.initial_dist[s0] * v0
    return ret, vis


def solve_exact(cmdp, budget=EnumerationBudget()):
    """Best deterministic policy with expected unsafe visits within ``kappa``.

    Ties go to the lowest policy index. Returns ``(TabularPolicy, value, index)``.
    """
    states = decision_states(cmdp)
    best_val, best_idx, best_acts = -np.inf, None, None
    for idx, acts, (ret, vis) in _batches(cmdp, states, budget, [cmdp.unsafe_set]):
        ok = vis[:, 0] <= cmdp.kappa + 1e-9
        if not ok.any():
            continue
        vals = np.where(ok, ret, -np.inf)
        j = int(np.argmax(vals))  # first maximum within the chunk
        if vals[j] > best_val + 1e-12:
            best_val, best_idx, best_acts = float(vals[j]), int(idx[j]), acts[j].copy()
    if best_idx is None:
        raise NoFeasible("no deterministic policy meets the unsafe-visit tolerance")
    return TabularPolicy.deterministic(best_acts, cmdp.n_actions), best_val, best_idx


def random_stochastic_policies(n, n_states, n_actions, rng):
    return rng.dirichlet(np.ones(n_actions), size=(n, n_states))


def verify_prop1(base, intervention, budget=EnumerationBudget(), n_random=10_000, rng_seed=0):
    """Search for a policy feasible in the induced CMDP but unsafe in the base one."""
    induced = induce(base, intervention).cmdp
    premise = check_eventual_safety(intervention, base.kappa)
    report = PropositionReport("eventual_safety", 0, vacuous=not premise, premise_holds=premise)
    D, Di = base.unsafe_set, intervention.trigger_set
    states = sorted(set(decision_states(base)) | set(decision_states(induced)))
    for idx, acts, _ in _batches(base, states, budget, []):
        _check_prop1_batch(report, base, induced, D, Di, intervention, acts,
                           [int(i) for i in idx], deterministic_stats)
        report.policies_checked += len(idx)
    if n_random:
        rng = np.random.default_rng(rng_seed)
        for start in range(0, n_random, CHUNK):
            m = min(CHUNK, n_random - start)
            probs = random_stochastic_policies(m, base.n_states, base.n_actions, rng)
            _check_prop1_batch(report, base, induced, D, Di, intervention, probs,
                               [f"random#{start + j}" for j in range(m)], stochastic_stats)
            report.random_checked += m
    return report


def _check_prop1_batch(report, base, induced, D, Di, iv, pols, labels, stats_fn):
    _, vi = stats_fn(induced, pols, [D, Di])
    _, vb = stats_fn(base, pols, [D])
    feas_i = (vi[:, 0] <= iv.kappa_i + TOL) & (vi[:, 1] <= iv.tau + TOL)
    report.feasible_in_induced += int(feas_i.sum())
    bad = feas_i & (vb[:, 0] > base.kappa + TOL)
    for j in np.nonzero(bad)[0]:
        report.counterexamples.append((labels[j], "unsafe_visits_in_base", float(vb[j, 0])))


def verify_prop2(base, intervention, budget=EnumerationBudget()):
    """Check that no policy visits ``D`` in the induced CMDP beyond the initial mass."""
    induced = induce(base, intervention).cmdp
    blanket = check_learning_safety(base, intervention)
    report = PropositionReport("learning_safety", 0, premise_holds=blanket)
    D = base.unsafe_set
    if not D:
        report.policies_checked = policy_count(induced)
        return report
    init_mass = float(base.initial_dist[sorted(D)].sum())
    states = decision_states(induced)
    for idx, acts, (_, vis) in _batches(induced, states, budget, [D]):
        bad = vis[:, 0] > init_mass + TOL
        for j in np.nonzero(bad)[0]:
            report.counterexamples.append((int(idx[j]), "unsafe_visits_in_induced", float(vis[j, 0])))
        report.policies_checked += len(idx)
    return report
