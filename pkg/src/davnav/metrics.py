"""Episode scoring: SR, SPL, SNA and their dynamic variants, plus the exact
interception oracle over a target's realized trajectory.

The dynamic metrics normalize by the earliest intersection the agent could
have reached: the smallest step t such that the minimum number of actions
from the start pose to the target's cell at t is at most t (rotations count,
so the bound is genuinely achievable by an embodied agent). Catchability is
arrive-at-or-before, since the target may also hold position. A later
intersection can be geodesically closer than the earliest one; the earliest
defines the metric, and the closest is exposed alongside for analysis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .gridmap import (UNREACHABLE, AgentPose, Cell, GridMap,
                      action_distance_field, geodesic_field)


@dataclass(frozen=True)
class InterceptResult:
    feasible: bool
    t_star: int | None = None
    catch_cell: Cell | None = None
    g_meters: float | None = None
    g_actions: int | None = None
    # closest catchable intersection by geodesic distance (may be later)
    closest_t: int | None = None
    closest_cell: Cell | None = None
    closest_g_meters: float | None = None


def intercept_oracle(grid: GridMap, start: AgentPose,
                     trajectory: Sequence[Cell]) -> InterceptResult:
    """Earliest catchable intersection with a realized target trajectory.

    trajectory[t] is the target's cell after t elapsed steps (index 0 is its
    spawn cell). One pose-graph search from the start yields action reach
    times for every cell; t_star is the first t with reach_time(traj[t]) <= t.
    """
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    for cell in trajectory:
        if not grid.is_free(cell):
            raise ValueError(f"trajectory touches occupied cell {cell}")
    reach = action_distance_field(grid, start)
    geo = geodesic_field(grid, start.cell)

    t_star = None
    closest = None  # (g_meters, t, cell)
    for t, cell in enumerate(trajectory):
        a = reach[cell]
        if a == UNREACHABLE or a > t:
            continue
        if t_star is None:
            t_star = t
        g = geo.distance(cell)
        if closest is None or g < closest[0]:
            closest = (g, t, cell)
    if t_star is None:
        return InterceptResult(feasible=False)
    catch = trajectory[t_star]
    return InterceptResult(
        feasible=True, t_star=t_star, catch_cell=catch,
        g_meters=geo.distance(catch), g_actions=int(reach[catch]),
        closest_t=closest[1], closest_cell=closest[2], closest_g_meters=closest[0])


@dataclass(frozen=True)
class EpisodeScores:
    success: bool
    g_meters: float | None
    g_actions: int | None
    p_meters: float
    a_actions: int
    dspl: float
    dsna: float
    spl: float | None  # static-target episodes only
    sna: float | None


def _ratio(shortest, taken) -> float:
    # A zero-length optimum scores 1.0 regardless of the path taken
    # (degenerate; cannot arise from the spawn rules).
    if shortest == 0:
        return 1.0
    return shortest / max(taken, shortest)


def score_episode(log, intercept: InterceptResult) -> EpisodeScores:
    """Per-episode scores from a finished episode log and its oracle result.

    DSPL_i = S_i * g / max(p_i, g) with g the geodesic length to the earliest
    catchable intersection and p_i the executed path length in meters; DSNA_i
    likewise over action counts. SPL/SNA additionally apply to static-target
    episodes, where they coincide with the dynamic variants because the
    trajectory is constant.

    A successful catch is itself a feasibility witness (the agent reached the
    target's cell at some t by taking t steps), so an infeasible oracle can
    only accompany a failed episode; those score 0 everywhere.
    """
    success = log.outcome == "success"
    static = log.config.move_prob == 0.0
    if not intercept.feasible:
        if success:
            raise ValueError("successful episode with infeasible oracle: corrupt log")
        zero = 0.0
        return EpisodeScores(success=False, g_meters=None, g_actions=None,
                             p_meters=log.path_length_m, a_actions=log.action_count,
                             dspl=zero, dsna=zero,
                             spl=zero if static else None,
                             sna=zero if static else None)
    dspl = _ratio(intercept.g_meters, log.path_length_m) if success else 0.0
    dsna = _ratio(intercept.g_actions, log.action_count) if success else 0.0
    return EpisodeScores(
        success=success, g_meters=intercept.g_meters, g_actions=intercept.g_actions,
        p_meters=log.path_length_m, a_actions=log.action_count,
        dspl=dspl, dsna=dsna,
        spl=dspl if static else None,
        sna=dsna if static else None)


@dataclass(frozen=True)
class ScoreReport:
    n: int
    sr: float
    dspl: float
    dsna: float
    spl: float | None
    sna: float | None

    def as_dict(self) -> dict:
        return {"n": self.n, "SR": self.sr, "SPL": self.spl, "SNA": self.sna,
                "DSPL": self.dspl, "DSNA": self.dsna}


def aggregate(scores: Sequence[EpisodeScores]) -> ScoreReport:
    """Arithmetic means over episodes; SPL/SNA average over the episodes on
    which they are defined (static targets), None when there are none."""
    if not scores:
        raise ValueError("no episodes to aggregate")
    sr = float(np.mean([s.success for s in scores]))
    dspl = float(np.mean([s.dspl for s in scores]))
    dsna = float(np.mean([s.dsna for s in scores]))
    spls = [s.spl for s in scores if s.spl is not None]
    snas = [s.sna for s in scores if s.sna is not None]
    return ScoreReport(
        n=len(scores), sr=sr, dspl=dspl, dsna=dsna,
        spl=float(np.mean(spls)) if spls else None,
        sna=float(np.mean(snas)) if snas else None)
