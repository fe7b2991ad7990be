"""Generators for the benchmark POMDPs: the 6-state and 15-state single
observation examples, the slippery 4x4 grid, and the 10x10 four-room world.

Grid cells are addressed as ``(column, row)`` with ``(1, 1)`` the bottom-left
cell; state ids are ``c<col>_<row>``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Pomdp, require_valid

MOVES = {
    "left": (-1, 0),
    "right": (1, 0),
    "up": (0, 1),
    "down": (0, -1),
}
GRID_ACTIONS = ("left", "right", "up", "down")
_LATERAL = {
    "left": ("down", "up"),
    "right": ("up", "down"),
    "up": ("left", "right"),
    "down": ("right", "left"),
}
_BACKWARD = {"left": "right", "right": "left", "up": "down", "down": "up"}


def gen_fig5() -> Pomdp:
    """Six states, two actions, one observation.

    sI -a1-> s2, sI -a2-> s3, s2 -a1-> s5, s2 -a2-> s4, s3 -a1-> s5,
    s3 -a2-> s6; s4, s5, s6 absorb. R(s2, a1) = R(s3, a1) = 1.
    """
    states = ("sI", "s2", "s3", "s4", "s5", "s6")
    ix = {s: i for i, s in enumerate(states)}
    P = np.zeros((6, 2, 6))
    edges = {
        ("sI", 0): "s2", ("sI", 1): "s3",
        ("s2", 0): "s5", ("s2", 1): "s4",
        ("s3", 0): "s5", ("s3", 1): "s6",
    }
    for (s, a), t in edges.items():
        P[ix[s], a, ix[t]] = 1.0
    for s in ("s4", "s5", "s6"):
        P[ix[s], :, ix[s]] = 1.0
    R = np.zeros((6, 2))
    R[ix["s2"], 0] = R[ix["s3"], 0] = 1.0
    return Pomdp(states, "sI", ("a1", "a2"), P, ("z1",), np.ones((6, 1)), R)


def gen_fig7() -> Pomdp:
    """Reconstruction of the 15-state, 3-action, single-observation example.

    The published drawing elides most edges, so the structure here is an
    explicit assumption: states sit in five columns of three (top, middle,
    bottom), column 1 = (s2, sI, s3), column 2 = (s4, s5, s6), column 3 =
    (s7, s8, s9), column 4 = (s10, s11, s12), column 5 = (s13, s14, s15).
    From any state in columns 1-3, a1/a2/a3 move deterministically to the
    top/middle/bottom state of the next column. From column 4, a1 -> s13,
    a2 -> s14, a3 -> s15, and a2 earns reward 1. Column 5 absorbs.
    """
    columns = [
        ("s2", "sI", "s3"),
        ("s4", "s5", "s6"),
        ("s7", "s8", "s9"),
        ("s10", "s11", "s12"),
        ("s13", "s14", "s15"),
    ]
    states = tuple(s for col in columns for s in col)
    ix = {s: i for i, s in enumerate(states)}
    P = np.zeros((15, 3, 15))
    R = np.zeros((15, 3))
    for j in range(4):
        for s in columns[j]:
            for a in range(3):
                P[ix[s], a, ix[columns[j + 1][a]]] = 1.0
    for s in columns[3]:
        R[ix[s], 1] = 1.0
    for s in columns[4]:
        P[ix[s], :, ix[s]] = 1.0
    return Pomdp(states, "sI", ("a1", "a2", "a3"), P, ("z1",), np.ones((15, 1)), R)


@dataclass(frozen=True)
class GridSpec:
    """Grid world layout.

    ``walls`` holds blocked boundaries as frozensets of two adjacent cells.
    ``doors`` is an ordered tuple of cell pairs (openings in interior walls),
    used only for reporting. With ``slippery=False`` every move succeeds.
    """

    width: int
    height: int
    initial_cell: tuple[int, int]
    target_cell: tuple[int, int]
    error_cells: frozenset = frozenset()
    walls: frozenset = frozenset()
    epsilon: float = 0.0
    slippery: bool = True
    rooms: tuple = ()  # per room: (col_range, row_range, door_col, door_row)
    doors: tuple = ()
    absorbing_target: bool = True
    absorbing_errors: bool = True

    def cells(self):
        return [(c, r) for r in range(1, self.height + 1) for c in range(1, self.width + 1)]

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        if self.slippery and not 0.0 <= self.epsilon < 0.075:
            raise ValueError(f"slip epsilon must lie in [0, 0.075), got {self.epsilon}")
        for name, cell in [("initial", self.initial_cell), ("target", self.target_cell)] + [
            ("error", c) for c in self.error_cells
        ]:
            if not self.inside(cell):
                raise ValueError(f"{name} cell {cell} outside the grid")

    def inside(self, cell) -> bool:
        c, r = cell
        return 1 <= c <= self.width and 1 <= r <= self.height

    def blocked(self, cell, direction) -> bool:
        dc, dr = MOVES[direction]
        nxt = (cell[0] + dc, cell[1] + dr)
        return not self.inside(nxt) or frozenset((cell, nxt)) in self.walls

    def step(self, cell, direction):
        if self.blocked(cell, direction):
            return cell
        dc, dr = MOVES[direction]
        return (cell[0] + dc, cell[1] + dr)

    def room_of(self, cell) -> int:
        for i, (cols, rows, _, _) in enumerate(self.rooms):
            if cols[0] <= cell[0] <= cols[1] and rows[0] <= cell[1] <= rows[1]:
                return i + 1
        raise ValueError(f"cell {cell} is in no room")


def cell_id(cell) -> str:
    return f"c{cell[0]}_{cell[1]}"


def move_distribution(spec: GridSpec, action: str) -> dict:
    """Probabilities of the intended, lateral and backward moves."""
    if not spec.slippery:
        return {action: 1.0}
    eps = spec.epsilon
    left, right = _LATERAL[action]
    return {
        action: 0.95 - eps / 3,
        left: 0.025 - eps / 3,
        right: 0.025 - eps / 3,
        _BACKWARD[action]: eps,
    }


def _relative9(spec: GridSpec):
    names = ("none",) + tuple(
        f"{kind}_{where}" for kind in ("target", "error")
        for where in ("left", "right", "above", "below")
    )
    where_of = {"left": "left", "right": "right", "up": "above", "down": "below"}

    def observe(cell):
        for kind, cells in (("target", {spec.target_cell}), ("error", spec.error_cells)):
            for d in GRID_ACTIONS:
                dc, dr = MOVES[d]
                if (cell[0] + dc, cell[1] + dr) in cells:
                    return f"{kind}_{where_of[d]}"
        return "none"

    return names, observe


def _fourroom36(spec: GridSpec):
    if not spec.rooms:
        raise ValueError("fourroom36 observations need room definitions")
    col_cls = ("left", "at", "right")
    row_cls = ("below", "at", "above")
    names = tuple(
        f"r{i + 1}_{rc}_{cc}" for i in range(len(spec.rooms))
        for rc in row_cls for cc in col_cls
    )

    def observe(cell):
        room = spec.room_of(cell)
        _, _, door_col, door_row = spec.rooms[room - 1]
        cc = col_cls[int(np.sign(cell[0] - door_col)) + 1]
        rc = row_cls[int(np.sign(cell[1] - door_row)) + 1]
        return f"r{room}_{rc}_{cc}"

    return names, observe


def gen_gridworld(spec: GridSpec, observation_mode: str = "relative9") -> Pomdp:
    """Grid POMDP with deterministic observations.

    Moves into a wall or off the grid leave the agent in place. The reward of
    ``(cell, action)`` is the probability of entering the target cell from
    ``cell`` under ``action``. Target and error cells absorb when configured to.
    """
    spec.validate()
    cells = spec.cells()
    ix = {c: i for i, c in enumerate(cells)}
    n = len(cells)
    if observation_mode == "relative9":
        obs_names, observe = _relative9(spec)
    elif observation_mode == "fourroom36":
        obs_names, observe = _fourroom36(spec)
    else:
        raise ValueError(f"unknown observation mode {observation_mode!r}")
    oix = {z: i for i, z in enumerate(obs_names)}

    P = np.zeros((n, 4, n))
    R = np.zeros((n, 4))
    O = np.zeros((n, len(obs_names)))
    absorbing = set()
    if spec.absorbing_target:
        absorbing.add(spec.target_cell)
    if spec.absorbing_errors:
        absorbing |= set(spec.error_cells)
    for cell in cells:
        i = ix[cell]
        O[i, oix[observe(cell)]] = 1.0
        for a, action in enumerate(GRID_ACTIONS):
            if cell in absorbing:
                P[i, a, i] = 1.0
                continue
            for direction, p in move_distribution(spec, action).items():
                P[i, a, ix[spec.step(cell, direction)]] += p
            if cell != spec.target_cell:
                R[i, a] = P[i, a, ix[spec.target_cell]]
    model = Pomdp(tuple(cell_id(c) for c in cells), cell_id(spec.initial_cell), GRID_ACTIONS,
                  P, obs_names, O, R)
    require_valid(model)
    return model


def grid4_spec(epsilon: float = 0.005) -> GridSpec:
    """4x4 slippery grid: start top-left, target bottom-right, errors in the
    remaining two corners."""
    return GridSpec(
        width=4, height=4,
        initial_cell=(1, 4), target_cell=(4, 1),
        error_cells=frozenset({(1, 1), (4, 4)}),
        epsilon=epsilon,
    )


def _wall_segment(cells_a, cells_b):
    return {frozenset((a, b)) for a, b in zip(cells_a, cells_b)}


def fourroom10_spec() -> GridSpec:
    """10x10 world split into four 5x5 rooms joined by one-cell doors.

    Rooms are numbered clockwise from the bottom-left; doors clockwise from the
    one joining rooms 1 and 4. Moves are deterministic.
    """
    walls = set()
    door_rows = {3, 8}   # openings in the vertical wall between columns 5 and 6
    door_cols = {3, 8}   # openings in the horizontal wall between rows 5 and 6
    for r in range(1, 11):
        if r not in door_rows:
            walls |= _wall_segment([(5, r)], [(6, r)])
    for c in range(1, 11):
        if c not in door_cols:
            walls |= _wall_segment([(c, 5)], [(c, 6)])
    rooms = (
        ((1, 5), (1, 5), 3, 3),
        ((1, 5), (6, 10), 3, 8),
        ((6, 10), (6, 10), 8, 8),
        ((6, 10), (1, 5), 8, 3),
    )
    doors = (
        ((5, 3), (6, 3)),   # room 1 - room 4
        ((3, 5), (3, 6)),   # room 1 - room 2
        ((5, 8), (6, 8)),   # room 2 - room 3
        ((8, 6), (8, 5)),   # room 3 - room 4
    )
    return GridSpec(
        width=10, height=10,
        initial_cell=(2, 9), target_cell=(8, 3),
        walls=frozenset(walls),
        slippery=False,
        rooms=rooms,
        doors=doors,
    )


def gen_grid4(epsilon: float = 0.005) -> Pomdp:
    return gen_gridworld(grid4_spec(epsilon), "relative9")


def gen_fourroom10() -> Pomdp:
    return gen_gridworld(fourroom10_spec(), "fourroom36")


BUILTINS = {
    "fig5": gen_fig5,
    "fig7": gen_fig7,
    "grid4": gen_grid4,
    "fourroom10": gen_fourroom10,
}


def builtin(name: str) -> Pomdp:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise ValueError(f"unknown builtin {name!r}; choose from {sorted(BUILTINS)}") from None
