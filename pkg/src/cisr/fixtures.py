"""Small 3x3 CMDPs used as desk-scale ground truth.

Grid cells are row-major (``state = row * 3 + col``). The slip fixtures use
Frozen Lake dynamics; ``shortcut`` is hand-built with deterministic moves and
one treacherous cell.
"""

import numpy as np

from .cmdp import build_cmdp
from .frozen_lake import FrozenLakeConfig, build_flake_cmdp, parse_map, trigger_ring
from .interventions import Intervention, reset_to_initial, reset_to_previous

ACTION_DELTAS = ((-1, 0), (0, 1), (0, -1), (1, 0))  # up, right, left, down


def slip_grid(text, horizon=6, kappa=0.1):
    grid = parse_map(text)
    return grid, build_flake_cmdp(grid, FrozenLakeConfig(kappa=kappa, horizon=horizon))


def shortcut_cmdp(fall_prob=0.3, step_reward=-0.1, goal_reward=1.0, horizon=10, kappa=0.1):
    """Start top-left, goal top-right, hole in the centre.

    The direct route crosses the top-middle cell, where any move drops the
    agent into the hole with ``fall_prob``. The six-step detour around the
    bottom is deterministic and safe. With the defaults the detour is the
    best policy that meets ``kappa`` while the direct route has the higher
    unconstrained return.
    """
    S, A = 9, 4
    hole, goal, risky = 4, 2, 1
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    for s in range(S):
        if s in (hole, goal):
            P[s, :, s] = 1.0
            continue
        r, c = divmod(s, 3)
        for a, (dr, dc) in enumerate(ACTION_DELTAS):
            r2, c2 = r + dr, c + dc
            s2 = r2 * 3 + c2 if 0 <= r2 < 3 and 0 <= c2 < 3 else s
            if s == risky:
                P[s, a, hole] += fall_prob
                P[s, a, s2] += 1.0 - fall_prob
            else:
                P[s, a, s2] += 1.0
        for s2 in range(S):
            R[s, :, s2] = goal_reward if s2 == goal else step_reward
    return build_cmdp({
        "n_states": S, "n_actions": A, "transition": P, "reward": R,
        "unsafe": [hole], "terminal": [hole, goal], "initial": {0: 1.0},
        "horizon": horizon, "kappa": kappa,
    })


def prop_fixtures():
    """Named ``(base CMDP, {intervention name: Intervention})`` pairs.

    Every intervention here satisfies ``tau + kappa_i <= kappa`` and blankets
    the unsafe set, so both propositions should verify on all of them.
    """
    out = {}
    for name, text, horizon, kappa in (("bottom_hole", "SFF\nFFF\nFHG", 6, 0.3),
                                       ("edge_hole", "SFF\nFFH\nFFG", 8, 0.1)):
        grid, base = slip_grid(text, horizon=horizon, kappa=kappa)
        ring = trigger_ring(grid, 1)
        out[name] = (base, {
            "ring_home": reset_to_initial(base, ring, "ring_home", kappa),
            "ring_back": reset_to_previous(base, ring, "ring_back", kappa),
            "ring_home_strict": reset_to_initial(base, ring, "ring_home_strict", 0.0),
        })
    base = shortcut_cmdp()
    ring = frozenset({1, 3, 4, 5, 7})
    out["shortcut"] = (base, {
        "ring_home": reset_to_initial(base, ring, "ring_home", 0.1),
        "ring_back": reset_to_previous(base, ring, "ring_back", 0.1),
    })
    return out


def broken_fixture():
    """A hole at the bottom-left whose only trigger state is the hole itself.

    Its neighbours can step straight into it, so the intervention is not a
    blanket and learning-time visits to the hole are possible.
    """
    _, base = slip_grid("SFF\nFFF\nHFG", horizon=6)
    iv = reset_to_initial(base, base.unsafe_set, "hole_only", 0.0)
    return base, iv


def identity_fixture():
    """An empty-trigger intervention with ``kappa_i = kappa``: the induced CMDP equals the base."""
    _, base = slip_grid("SFF\nFHF\nFFG", horizon=6)
    iv = Intervention("none", frozenset(), np.zeros((9, 9)), 0.0, base.kappa)
    return base, iv
