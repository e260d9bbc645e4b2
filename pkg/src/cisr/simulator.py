"""Step-by-step simulation of tabular CMDPs, with or without a teacher.

This is the path students learn on. Unlike the materialised induced CMDP it
supports the history-dependent reset that returns the student to the state
it just left.

Episode clock: states ``s_0 .. s_T``. Entering a trigger state takes one
tick; the teacher's reset takes another, so a simulated trigger costs the
same horizon budget as in the materialised CMDP.
"""

from .cmdp import cumulative_rows, sample_index
from .interventions import TO_INITIAL, TO_PREVIOUS

RUNNING, GOAL, UNSAFE, HORIZON, TIMEOUT = 0, 1, 2, 3, 4
OUTCOME_NAMES = {GOAL: "goal", UNSAFE: "unsafe", HORIZON: "horizon", TIMEOUT: "timeout"}


class TabularSimulator:
    """Environment wrapper for one (base CMDP, intervention) pair.

    ``constraint_names`` and ``tolerances`` follow the induced CMDP:
    ``("unsafe",)`` with ``kappa`` for the bare CMDP, and
    ``("unsafe", "trigger")`` with ``(kappa_i, tau)`` under an intervention.
    """

    def __init__(self, base, intervention=None):
        self.base = base
        self.intervention = intervention
        self.n_states = base.n_states
        self.n_actions = base.n_actions
        self.horizon = base.horizon
        S = base.n_states
        self._cum = cumulative_rows(base)
        self._reward = base.reward.tolist()
        self._init = base.initial_dist.cumsum().tolist()
        self._init[-1] = 1.0
        self._unsafe = [s in base.unsafe_set for s in range(S)]
        self._terminal = [s in base.terminal_set for s in range(S)]
        if intervention is None or not intervention.trigger_set:
            self._trigger = [False] * S
        else:
            self._trigger = [s in intervention.trigger_set for s in range(S)]
        if intervention is None:
            self.constraint_names = ("unsafe",)
            self.tolerances = (base.kappa,)
            self._hits = [(int(u),) for u in self._unsafe]
            self._mode = None
        else:
            self.constraint_names = ("unsafe", "trigger")
            self.tolerances = (intervention.kappa_i, intervention.tau)
            self._hits = [(int(self._unsafe[s]), int(self._trigger[s])) for s in range(S)]
            self._mode = intervention.reset_mode
            kernel = intervention.reset_kernel.cumsum(axis=1)
            self._reset_cum = {s: kernel[s].tolist() for s in intervention.trigger_set}
        self.s = 0
        self.t = 0

    def reset(self, u):
        """Start an episode; returns (state, hits of s_0, episode already over)."""
        s = sample_index(self._init, u())
        self.s, self.t = s, 0
        return s, self._hits[s], self._terminal[s]

    def step(self, a, u):
        """Advance one student action.

        Returns ``(obs, reward, done, hits, triggered, failed, outcome)`` where
        ``hits`` counts constraint-set visits caused by this call (summed over
        the entered state and, after a reset, the landing state).
        """
        s = self.s
        s2 = sample_index(self._cum[s][a], u())
        r = self._reward[s][a][s2]
        t = self.t + 1
        hits = self._hits[s2]
        failed = self._unsafe[s2]
        if self._trigger[s2]:
            if t >= self.horizon:
                self.s, self.t = s2, t
                return s2, r, True, hits, True, failed, HORIZON
            mode = self._mode
            if mode == TO_PREVIOUS:
                s3 = s
            elif mode == TO_INITIAL:
                s3 = sample_index(self._init, u())
            else:
                s3 = sample_index(self._reset_cum[s2], u())
            t += 1
            h3 = self._hits[s3]
            if h3 != (0, 0):
                hits = tuple(x + y for x, y in zip(hits, h3))
                failed = failed or self._unsafe[s3]
            self.s, self.t = s3, t
            if self._terminal[s3]:
                return s3, r, True, hits, True, failed, UNSAFE if self._unsafe[s3] else GOAL
            if t >= self.horizon:
                return s3, r, True, hits, True, failed, HORIZON
            return s3, r, False, hits, True, failed, RUNNING
        self.s, self.t = s2, t
        if self._terminal[s2]:
            return s2, r, True, hits, False, failed, UNSAFE if failed else GOAL
        if t >= self.horizon:
            return s2, r, True, hits, False, failed, HORIZON
        return s2, r, False, hits, False, failed, RUNNING


def policy_sampler(action_probs):
    """Cumulative action distributions as nested lists for ``sample_index``."""
    cum = action_probs.cumsum(axis=1)
    cum[:, -1] = 1.0
    return cum.tolist()


def run_episode(sim, cum_pi, u):
    """Play one episode; returns (return, visits per constraint, outcome, student steps)."""
    s, hits, done = sim.reset(u)
    visits = list(hits)
    if done:
        return 0.0, visits, UNSAFE if hits[0] else GOAL, 0
    total, n = 0.0, 0
    while True:
        a = sample_index(cum_pi[s], u())
        s, r, done, hits, _, _, outcome = sim.step(a, u)
        total += r
        n += 1
        for k, h in enumerate(hits):
            visits[k] += h
        if done:
            return total, visits, outcome, n
