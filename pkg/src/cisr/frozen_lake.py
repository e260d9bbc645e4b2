"""Frozen Lake grid worlds and their teacher interventions.

Maps are ASCII text, one row per line, using ``S`` (start), ``F`` (frozen,
safe), ``H`` (hole, unsafe and terminal) and ``G`` (goal, terminal). Cells
are indexed row-major: ``state = row * width + col`` with row 0 at the top.

Moves slip: the intended direction with ``p_intended``, each orthogonal one
with ``p_orthogonal``. A move off the grid leaves the agent in place.
"""

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .cmdp import build_cmdp
from .errors import MapError
from .interventions import reset_to_initial, reset_to_previous

ACTIONS = ("up", "right", "left", "down")
_DELTA = {0: (-1, 0), 1: (0, 1), 2: (0, -1), 3: (1, 0)}
_ORTHO = {0: (2, 1), 1: (0, 3), 2: (0, 3), 3: (2, 1)}
CELLS = frozenset("SFHG")


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    cells: tuple  # tuple of row strings

    def index(self, row, col):
        return row * self.width + col

    def coords(self, state):
        return divmod(state, self.width)

    def cells_of(self, kind):
        return [self.index(r, c) for r, line in enumerate(self.cells)
                for c, ch in enumerate(line) if ch == kind]

    @property
    def start(self):
        return self.cells_of("S")[0]

    @property
    def holes(self):
        return self.cells_of("H")

    @property
    def goals(self):
        return self.cells_of("G")

    def to_text(self):
        return "\n".join(self.cells) + "\n"


@dataclass(frozen=True)
class FrozenLakeConfig:
    p_intended: float = 0.8
    p_orthogonal: float = 0.1
    goal_reward: float = 6.0
    step_reward: float = -0.01
    kappa: float = 0.1
    horizon: int = 100

    def __post_init__(self):
        if abs(self.p_intended + 2 * self.p_orthogonal - 1.0) > 1e-12:
            raise ValueError("p_intended + 2 * p_orthogonal must equal 1")


def parse_map(text):
    rows = [line.rstrip("\r") for line in text.strip("\n").split("\n")]
    rows = [r for r in rows if r != ""]
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch not in CELLS:
                raise MapError("BadCharacter", f"{ch!r} at ({r},{c})", (r, c))
    if not rows or any(len(line) != len(rows[0]) for line in rows):
        raise MapError("RaggedRows", "rows differ in length")
    n_start = sum(line.count("S") for line in rows)
    if n_start != 1:
        raise MapError("MissingStart", f"expected exactly one S, found {n_start}")
    if not any("G" in line for line in rows):
        raise MapError("MissingGoal", "map has no G cell")
    return GridMap(width=len(rows[0]), height=len(rows), cells=tuple(rows))


def default_map_text():
    return resources.files("cisr.data").joinpath("frozen_lake_10x10.txt").read_text()


def default_map():
    return parse_map(default_map_text())


def _move(grid, state, direction):
    r, c = grid.coords(state)
    dr, dc = _DELTA[direction]
    r2, c2 = r + dr, c + dc
    if 0 <= r2 < grid.height and 0 <= c2 < grid.width:
        return grid.index(r2, c2)
    return state


def build_flake_cmdp(grid, config=FrozenLakeConfig()):
    S, A = grid.width * grid.height, len(ACTIONS)
    holes, goals = set(grid.holes), set(grid.goals)
    terminal = holes | goals
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    for s in range(S):
        if s in terminal:
            P[s, :, s] = 1.0
            continue
        for a in range(A):
            o1, o2 = _ORTHO[a]
            for d, p in ((a, config.p_intended), (o1, config.p_orthogonal), (o2, config.p_orthogonal)):
                if p == 0.0:
                    continue
                s2 = _move(grid, s, d)
                P[s, a, s2] += p
                R[s, a, s2] = config.goal_reward if s2 in goals else config.step_reward
    labels = tuple(ch for line in grid.cells for ch in line)
    return build_cmdp({
        "n_states": S,
        "n_actions": A,
        "transition": P,
        "reward": R,
        "unsafe": sorted(holes),
        "terminal": sorted(terminal),
        "initial": {grid.start: 1.0},
        "horizon": config.horizon,
        "kappa": config.kappa,
        "labels": labels,
    })


def distance_to_holes(grid):
    """Manhattan (4-neighbourhood) distance from each cell to the nearest hole."""
    holes = [grid.coords(h) for h in grid.holes]
    out = np.full(grid.width * grid.height, np.inf)
    for s in range(len(out)):
        r, c = grid.coords(s)
        for hr, hc in holes:
            out[s] = min(out[s], abs(r - hr) + abs(c - hc))
    return out


def trigger_ring(grid, radius):
    """Holes plus every non-goal cell within ``radius`` steps of one.

    Goal cells are left out: they are terminal, so the student can never
    step from them into a hole.
    """
    dist = distance_to_holes(grid)
    goals = set(grid.goals)
    return frozenset(int(s) for s in np.nonzero(dist <= radius)[0] if s not in goals)


def make_interventions(grid, base, tau_soft=0.1, tau_hard=0.0):
    """Return the SR1, SR2 and HR interventions for ``grid``.

    SR1/SR2 trigger within distance 1/2 of a hole and send the student back to
    where it came from; HR shares SR1's trigger set and restarts the episode.
    """
    sr1 = trigger_ring(grid, 1)
    sr2 = trigger_ring(grid, 2)
    if grid.start in sr2 and grid.holes:
        raise MapError("StartInTrigger", "the start cell lies inside a trigger ring")
    return {
        "SR1": reset_to_previous(base, sr1, "SR1", tau_soft),
        "SR2": reset_to_previous(base, sr2, "SR2", tau_soft),
        "HR": reset_to_initial(base, sr1, "HR", tau_hard),
    }


def render(grid, marked=frozenset(), mark="x"):
    """ASCII rendering with ``marked`` F cells shown as ``mark``."""
    out = []
    for r, line in enumerate(grid.cells):
        out.append("".join(mark if (ch == "F" and grid.index(r, c) in marked) else ch
                           for c, ch in enumerate(line)))
    return "\n".join(out)
