"""Teacher interventions and the CMDPs they induce.

An intervention is a trigger set ``D_i`` plus a reset rule. Whenever the
student enters a trigger state the teacher moves it to a state outside
``D_i``; that move is action-independent and carries no reward. The induced
CMDP keeps the original unsafe set (tolerance ``kappa_i``) and adds the
trigger set as a second constraint with tolerance ``tau``.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from .cmdp import ROW_TOL, ConstraintSet, TabularCMDP
from .errors import ResetIntoTrigger, TriggerOutOfRange

FIXED_KERNEL = "fixed_kernel"
TO_INITIAL = "to_initial_distribution"
TO_PREVIOUS = "to_previous_state"
RESET_MODES = (FIXED_KERNEL, TO_INITIAL, TO_PREVIOUS)


@dataclass(frozen=True, eq=False)
class Intervention:
    """Trigger set, reset kernel and tolerances of one teacher intervention.

    ``reset_kernel`` is an ``(S, S)`` matrix whose rows for trigger states are
    the Markov reset distributions; other rows are ignored. For
    ``reset_mode == TO_PREVIOUS`` the kernel is only the Markov stand-in used
    by exact evaluation, while the simulator sends the student back to the
    state it left.
    """

    name: str
    trigger_set: frozenset
    reset_kernel: np.ndarray
    tau: float = 0.0
    kappa_i: float = 0.0
    reset_mode: str = FIXED_KERNEL

    def __post_init__(self):
        if self.reset_mode not in RESET_MODES:
            raise ValueError(f"unknown reset mode {self.reset_mode!r}")
        if self.tau < 0 or self.kappa_i < 0:
            raise ValueError("tolerances must be nonnegative")
        S = self.reset_kernel.shape[0]
        if self.reset_kernel.shape != (S, S):
            raise ValueError("reset_kernel must be square")
        if any(not 0 <= s < S for s in self.trigger_set):
            raise TriggerOutOfRange(f"trigger states outside 0..{S - 1}")
        trig = sorted(self.trigger_set)
        if trig:
            rows = self.reset_kernel[trig]
            if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > ROW_TOL):
                raise ValueError("reset rows of trigger states must be distributions")
            leak = rows[:, trig]
            if np.any(leak > 0):
                i, j = np.argwhere(leak > 0)[0]
                raise ResetIntoTrigger(
                    f"reset from state {trig[i]} puts mass {leak[i, j]} on trigger state {trig[j]}"
                )
        self.reset_kernel.setflags(write=False)

    @property
    def is_markov(self):
        return self.reset_mode != TO_PREVIOUS


@dataclass(frozen=True, eq=False)
class InducedCMDP:
    base: TabularCMDP
    intervention: Intervention
    cmdp: TabularCMDP

    @property
    def trigger_set(self):
        return self.intervention.trigger_set


def identity_intervention(n_states, name="none", kappa_i=0.0):
    """Intervention with no trigger states; inducing it leaves dynamics unchanged."""
    return Intervention(name, frozenset(), np.zeros((n_states, n_states)), 0.0, kappa_i)


def reset_to_initial(base, trigger_set, name, tau, kappa_i=0.0):
    K = np.zeros((base.n_states, base.n_states))
    for s in trigger_set:
        K[s] = base.initial_dist
    return Intervention(name, frozenset(trigger_set), K, tau, kappa_i, TO_INITIAL)


def nearest_safe_predecessors(base, trigger_set):
    """Markov stand-in for a reset to the previous state.

    For each trigger state, spread mass uniformly over the non-trigger states
    closest to it along reversed transitions (direct predecessors when any
    exist). Falls back to the initial distribution if no non-trigger state
    can reach it.
    """
    S = base.n_states
    trig = set(trigger_set)
    reach = base.transition.max(axis=1) > 0  # reach[p, s]: p -> s possible
    preds = [np.nonzero(reach[:, s])[0].tolist() for s in range(S)]
    K = np.zeros((S, S))
    for s in trig:
        found, seen, frontier = [], {s}, [s]
        while frontier and not found:
            nxt = []
            for v in frontier:
                for p in preds[v]:
                    if p in seen or p in base.terminal_set:
                        continue
                    seen.add(p)
                    if p in trig:
                        nxt.append(p)
                    else:
                        found.append(p)
            frontier = nxt
        if found:
            K[s, sorted(set(found))] = 1.0 / len(set(found))
        else:
            K[s] = base.initial_dist
    return K


def reset_to_previous(base, trigger_set, name, tau, kappa_i=0.0):
    K = nearest_safe_predecessors(base, trigger_set)
    return Intervention(name, frozenset(trigger_set), K, tau, kappa_i, TO_PREVIOUS)


def induce(base, intervention):
    """Materialise the intervention-induced CMDP.

    Rows of trigger states are replaced by the reset distribution for every
    action and their rewards zeroed; all other rows are copied unchanged.
    Trigger states stop being terminal, since the teacher moves the student
    on from them.
    """
    S = base.n_states
    if intervention.reset_kernel.shape != (S, S):
        raise TriggerOutOfRange("intervention and CMDP disagree on the number of states")
    if any(not 0 <= s < S for s in intervention.trigger_set):
        raise TriggerOutOfRange("trigger set exceeds the state space")
    P = base.transition.copy()
    R = base.reward.copy()
    trig = sorted(intervention.trigger_set)
    if trig:
        P[trig] = intervention.reset_kernel[trig][:, None, :]
        R[trig] = 0.0
    aux = (ConstraintSet("trigger", intervention.trigger_set, intervention.tau),)
    cmdp = TabularCMDP(
        n_states=S,
        n_actions=base.n_actions,
        transition=P,
        reward=R,
        unsafe_set=base.unsafe_set,
        initial_dist=base.initial_dist.copy(),
        horizon=base.horizon,
        kappa=intervention.kappa_i,
        terminal_set=base.terminal_set - intervention.trigger_set,
        aux_constraints=aux,
        labels=base.labels,
    )
    return InducedCMDP(base, intervention, cmdp)


def check_learning_safety(base, intervention):
    """True iff the trigger set blankets ``D``: ``D`` is inside ``D_i`` and no
    state outside ``D_i`` can step into ``D`` under any action."""
    D, Di = base.unsafe_set, intervention.trigger_set
    if not D <= Di:
        return False
    if not D:
        return True
    outside = [s for s in range(base.n_states) if s not in Di]
    if not outside:
        return True
    into_d = base.transition[np.ix_(outside, range(base.n_actions), sorted(D))]
    return not np.any(into_d > 0)


def check_eventual_safety(intervention, kappa, tol=1e-12):
    return intervention.tau + intervention.kappa_i <= kappa + tol


def graph_distance(base, sources):
    """Breadth-first distance along one-step reachability from ``sources`` (undirected)."""
    reach = base.transition.max(axis=1) > 0
    adj = reach | reach.T
    dist = np.full(base.n_states, np.inf)
    q = deque()
    for s in sources:
        dist[s] = 0
        q.append(s)
    while q:
        v = q.popleft()
        for w in np.nonzero(adj[v])[0]:
            if dist[w] == np.inf:
                dist[w] = dist[v] + 1
                q.append(w)
    return dist
