"""Goal-directed stochastic motion of the sound-emitting target.

The target has no embodiment and no heading: it teleports one grid node at a
time along a shortest path to a uniformly drawn goal, advancing with
probability ``move_prob`` per step (0.30 by default, which keeps it slightly
slower than the agent; 0 models the static-goal benchmark). On reaching its
goal it immediately draws a fresh one. Goals always exclude the agent's
current cell at draw time; the target itself may pass through the agent's
cell, and co-location is what the agent must Stop on.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .gridmap import NORTH, Cell, GridMap, shortest_cell_path

DEFAULT_MOVE_PROB = 0.30


@dataclass(frozen=True)
class TargetState:
    cell: Cell
    goal: Cell
    planned_path: tuple[Cell, ...]
    trajectory: tuple[Cell, ...]  # realized cell per elapsed step, index 0 = spawn
    move_prob: float = DEFAULT_MOVE_PROB

    def __post_init__(self):
        if not (0.0 <= self.move_prob <= 1.0):
            raise ValueError("move_prob must be in [0, 1]")
        if self.planned_path[0] != self.cell or self.planned_path[-1] != self.goal:
            raise ValueError("planned path must run from current cell to goal")


def _draw_goal(rng: np.random.Generator, grid: GridMap, exclude: set[Cell],
               fallback: Cell) -> Cell:
    """Uniform over free cells minus ``exclude``; degenerate maps (no
    candidate left) fall back to the given cell."""
    candidates = [c for c in grid.free_cells() if c not in exclude]
    if not candidates:
        return fallback
    return candidates[rng.integers(len(candidates))]


def spawn_target(rng: np.random.Generator, grid: GridMap, agent_cell: Cell,
                 move_prob: float = DEFAULT_MOVE_PROB) -> TargetState:
    """Spawn on a uniform free cell (never the agent's), with a uniform goal
    excluding both the agent cell and the spawn cell, and a planned shortest
    path to it. Requires a connected map so a path always exists."""
    free = grid.free_cells()
    starts = [c for c in free if c != agent_cell]
    if not starts:
        raise ValueError("need at least 2 free cells to spawn a target")
    start = starts[rng.integers(len(starts))]
    goal = _draw_goal(rng, grid, exclude={agent_cell, start}, fallback=start)
    path = tuple(shortest_cell_path(grid, start, goal, initial_heading=NORTH))
    return TargetState(cell=start, goal=goal, planned_path=path,
                       trajectory=(start,), move_prob=move_prob)


def step_target(rng: np.random.Generator, state: TargetState, grid: GridMap,
                agent_cell: Cell) -> TargetState:
    """Advance one step: move with probability ``move_prob``, resample the
    goal on arrival, always append to the trajectory.

    Draw order is fixed for replay: the move coin first, then (only on
    arrival) the goal draw.
    """
    cell = state.cell
    goal = state.goal
    path = state.planned_path
    if rng.random() < state.move_prob and cell != goal:
        path = path[1:]  # the remaining path keeps state.planned_path[0] == cell
        cell = path[0]
    if cell == goal:
        goal = _draw_goal(rng, grid, exclude={agent_cell, cell}, fallback=cell)
        path = tuple(shortest_cell_path(grid, cell, goal, initial_heading=NORTH))
    return replace(state, cell=cell, goal=goal, planned_path=path,
                   trajectory=state.trajectory + (cell,))
