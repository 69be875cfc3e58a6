"""Occupancy-grid worlds: parsing/generation, geodesic fields, pose-graph
action distances, ray-cast range sensing, and the agent-built geometric map.

Cells are (row, col) with row 0 at the top. The world is always sealed: every
border cell is occupied, so ray casting and path search terminate without
bounds checks. Distances come in two flavors used throughout the benchmark:

* geodesic distance: 4-connected breadth-first cell distance times the map
  resolution, in meters;
* action distance: minimum number of {Forward, RotateLeft, RotateRight}
  actions over the pose graph (cell x heading), ending at any heading.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field

import numpy as np

Cell = tuple[int, int]

UNREACHABLE = -1

# Headings are indexed clockwise so rotations are +-1 mod 4.
NORTH, EAST, SOUTH, WEST = 0, 1, 2, 3
HEADING_NAMES = ("North", "East", "South", "West")
HEADING_VECTORS = ((-1, 0), (0, 1), (1, 0), (0, -1))
# World-frame angle of each heading, radians, East = 0, counterclockwise.
HEADING_ANGLES = (np.pi / 2, 0.0, -np.pi / 2, np.pi)


def heading_from_name(name: str) -> int:
    try:
        return HEADING_NAMES.index(name)
    except ValueError:
        raise ValueError(f"unknown heading {name!r}") from None


@dataclass(frozen=True, eq=False)
class GridMap:
    """Immutable occupancy grid with a sealed border.

    ``occupancy[r, c]`` is True for occupied cells. ``resolution`` is meters
    per cell; the presets used by the benchmark are 0.5 m and 1.0 m.
    """

    width: int
    height: int
    resolution: float
    occupancy: np.ndarray
    name: str = "map"

    def __eq__(self, other):
        if not isinstance(other, GridMap):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and self.resolution == other.resolution and self.name == other.name
                and np.array_equal(self.occupancy, other.occupancy))

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.shape != (self.height, self.width):
            raise ValueError(f"occupancy shape {occ.shape} != ({self.height}, {self.width})")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        occ = occ.copy()
        occ[0, :] = occ[-1, :] = True
        occ[:, 0] = occ[:, -1] = True
        if not (~occ).any():
            raise ValueError("map has no free cells")
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)

    def is_free(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width and not self.occupancy[r, c]

    def free_cells(self) -> list[Cell]:
        """All free cells in row-major order."""
        rows, cols = np.nonzero(~self.occupancy)
        return [(int(r), int(c)) for r, c in zip(rows, cols)]

    def neighbors(self, cell: Cell) -> list[Cell]:
        """Free 4-adjacent neighbors, in N/E/S/W order."""
        r, c = cell
        out = []
        for dr, dc in HEADING_VECTORS:
            n = (r + dr, c + dc)
            if self.is_free(n):
                out.append(n)
        return out

    def is_connected(self) -> bool:
        """True if the free space forms a single 4-connected component."""
        free = self.free_cells()
        if not free:
            return False
        seen = {free[0]}
        queue = deque([free[0]])
        while queue:
            cur = queue.popleft()
            for n in self.neighbors(cur):
                if n not in seen:
                    seen.add(n)
                    queue.append(n)
        return len(seen) == len(free)


@dataclass(frozen=True)
class AgentPose:
    cell: Cell
    heading: int

    def __post_init__(self):
        if self.heading not in (NORTH, EAST, SOUTH, WEST):
            raise ValueError(f"invalid heading {self.heading}")

    @property
    def heading_name(self) -> str:
        return HEADING_NAMES[self.heading]

    def forward_cell(self) -> Cell:
        dr, dc = HEADING_VECTORS[self.heading]
        return (self.cell[0] + dr, self.cell[1] + dc)


# ---------------------------------------------------------------------------
# Map document format
#
#   davmap v1
#   resolution <meters>
#   name <string>
#   <H lines of W characters, '#' occupied, '.' free>
#
# Documents whose outer ring is not entirely '#' are wrapped in a sealing
# ring, growing the grid by 2 in each dimension (a bare 3x3 patch of '.'
# parses to a 5x5 sealed map with 9 free cells).
# ---------------------------------------------------------------------------


class MapFormatError(ValueError):
    pass


def parse_map(text: str) -> GridMap:
    """Parse a ``davmap v1`` document into a GridMap."""
    lines = text.rstrip("\n").split("\n")
    if len(lines) < 4:
        raise MapFormatError("document too short")
    if lines[0].strip() != "davmap v1":
        raise MapFormatError(f"bad magic line {lines[0]!r}")
    m = re.fullmatch(r"resolution ([0-9.eE+-]+)", lines[1].strip())
    if not m:
        raise MapFormatError("missing resolution header")
    resolution = float(m.group(1))
    if resolution <= 0:
        raise MapFormatError("resolution must be positive")
    m = re.fullmatch(r"name (.+)", lines[2].strip())
    if not m:
        raise MapFormatError("missing name header")
    name = m.group(1)

    rows = lines[3:]
    if not rows:
        raise MapFormatError("no grid rows")
    width = len(rows[0])
    for i, row in enumerate(rows):
        if len(row) != width:
            raise MapFormatError(f"row {i} has length {len(row)}, expected {width}")
        bad = set(row) - {"#", "."}
        if bad:
            raise MapFormatError(f"unknown character(s) {sorted(bad)} in row {i}")
    occ = np.array([[ch == "#" for ch in row] for row in rows], dtype=bool)

    sealed = occ[0, :].all() and occ[-1, :].all() and occ[:, 0].all() and occ[:, -1].all()
    if not sealed:
        occ = np.pad(occ, 1, constant_values=True)
    if not (~occ).any():
        raise MapFormatError("map has no free cells")
    h, w = occ.shape
    return GridMap(width=w, height=h, resolution=resolution, occupancy=occ, name=name)


def serialize_map(grid: GridMap) -> str:
    """Emit the ``davmap v1`` document; parse_map(serialize_map(g)) == g."""
    rows = ["".join("#" if v else "." for v in row) for row in grid.occupancy]
    header = [
        "davmap v1",
        f"resolution {grid.resolution!r}",
        f"name {grid.name}",
    ]
    return "\n".join(header + rows) + "\n"


@dataclass(frozen=True)
class MapGenParams:
    """Room-and-corridor generator parameters (stand-in for scanned scenes)."""

    width: int = 20
    height: int = 20
    rooms: int = 4
    room_min: int = 3
    room_max: int = 6

    def validate(self):
        if self.rooms < 1:
            raise ValueError("need at least one room")
        if self.width < 5 or self.height < 5:
            raise ValueError("map dims must be >= 5")
        if self.room_min < 1 or self.room_max < self.room_min:
            raise ValueError("bad room size range")
        if self.room_max > self.width - 2 or self.room_max > self.height - 2:
            raise ValueError("room_max does not fit inside the border")


def generate_map(seed: int, params: MapGenParams = MapGenParams(),
                 resolution: float = 0.5, name: str | None = None) -> GridMap:
    """Deterministic room-and-corridor map with a single connected free area.

    Rooms are rectangles carved from solid rock; consecutive room centers are
    joined by L-shaped corridors, which guarantees connectivity.
    """
    params.validate()
    rng = np.random.default_rng(seed)
    occ = np.ones((params.height, params.width), dtype=bool)

    centers = []
    for _ in range(params.rooms):
        rh = int(rng.integers(params.room_min, params.room_max + 1))
        rw = int(rng.integers(params.room_min, params.room_max + 1))
        r0 = int(rng.integers(1, params.height - rh)) if params.height - rh > 1 else 1
        c0 = int(rng.integers(1, params.width - rw)) if params.width - rw > 1 else 1
        occ[r0:r0 + rh, c0:c0 + rw] = False
        centers.append((r0 + rh // 2, c0 + rw // 2))

    for (r1, c1), (r2, c2) in zip(centers, centers[1:]):
        # L-corridor: horizontal leg then vertical leg (coin-flipped order).
        if rng.random() < 0.5:
            occ[r1, min(c1, c2):max(c1, c2) + 1] = False
            occ[min(r1, r2):max(r1, r2) + 1, c2] = False
        else:
            occ[min(r1, r2):max(r1, r2) + 1, c1] = False
            occ[r2, min(c1, c2):max(c1, c2) + 1] = False

    grid = GridMap(width=params.width, height=params.height, resolution=resolution,
                   occupancy=occ, name=name or f"gen-{seed}")
    if not grid.is_connected():
        # carving L-corridors between consecutive centers makes this unreachable,
        # but the contract is load-bearing for everything downstream
        raise AssertionError("generator produced a disconnected map")
    return grid


# ---------------------------------------------------------------------------
# Geodesic fields and pose-graph search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeodesicField:
    """Breadth-first distances from ``source`` over free cells.

    ``steps`` holds cell counts with UNREACHABLE (-1) for occupied or
    unreachable cells; meters are steps * resolution.
    """

    source: Cell
    steps: np.ndarray
    resolution: float

    def reachable(self, cell: Cell) -> bool:
        return self.steps[cell] != UNREACHABLE

    def step_count(self, cell: Cell) -> int:
        return int(self.steps[cell])

    def distance(self, cell: Cell) -> float:
        """Geodesic distance in meters; raises on unreachable cells."""
        s = self.steps[cell]
        if s == UNREACHABLE:
            raise ValueError(f"cell {cell} unreachable from {self.source}")
        return float(s) * self.resolution


def geodesic_field(grid: GridMap, source: Cell) -> GeodesicField:
    """4-connected BFS distance field from a free source cell."""
    if not grid.is_free(source):
        raise ValueError(f"source {source} is not a free cell")
    steps = np.full((grid.height, grid.width), UNREACHABLE, dtype=np.int32)
    steps[source] = 0
    queue = deque([source])
    while queue:
        cur = queue.popleft()
        d = steps[cur]
        for n in grid.neighbors(cur):
            if steps[n] == UNREACHABLE:
                steps[n] = d + 1
                queue.append(n)
    steps.setflags(write=False)
    return GeodesicField(source=source, steps=steps, resolution=grid.resolution)


def shortest_cell_path(grid: GridMap, start: Cell, goal: Cell,
                       initial_heading: int = NORTH) -> list[Cell]:
    """One 4-connected shortest cell path from start to goal, deterministic.

    Ties are broken by direction preference relative to the walker's current
    travel direction: ahead, then left, then right, then behind. The first
    step uses ``initial_heading`` as the travel direction (the agent's actual
    heading for direction-of-arrival queries; North by convention for the
    heading-less target).
    """
    field = geodesic_field(grid, goal)
    if not grid.is_free(start) or not field.reachable(start):
        raise ValueError(f"no path from {start} to {goal}")
    path = [start]
    heading = initial_heading
    cur = start
    while cur != goal:
        remaining = field.step_count(cur)
        chosen = None
        for rel in (0, -1, 1, 2):  # ahead, left, right, behind
            h = (heading + rel) % 4
            dr, dc = HEADING_VECTORS[h]
            n = (cur[0] + dr, cur[1] + dc)
            if grid.is_free(n) and field.step_count(n) == remaining - 1:
                chosen = (n, h)
                break
        assert chosen is not None, "BFS field guarantees a descending neighbor"
        cur, heading = chosen
        path.append(cur)
    return path


def _pose_index(cell: Cell, heading: int, width: int) -> int:
    return (cell[0] * width + cell[1]) * 4 + heading


def action_distance_field(grid: GridMap, start: AgentPose) -> np.ndarray:
    """Per-cell minimum action count from ``start`` to each cell (any final
    heading), over {Forward, RotateLeft, RotateRight}. UNREACHABLE where no
    pose path exists."""
    if not grid.is_free(start.cell):
        raise ValueError(f"start cell {start.cell} is not free")
    h, w = grid.height, grid.width
    dist = np.full(h * w * 4, UNREACHABLE, dtype=np.int32)
    s = _pose_index(start.cell, start.heading, w)
    dist[s] = 0
    queue = deque([(start.cell, start.heading)])
    while queue:
        cell, heading = queue.popleft()
        d = dist[_pose_index(cell, heading, w)]
        dr, dc = HEADING_VECTORS[heading]
        fwd = (cell[0] + dr, cell[1] + dc)
        nxt = []
        if grid.is_free(fwd):
            nxt.append((fwd, heading))
        nxt.append((cell, (heading - 1) % 4))  # RotateLeft
        nxt.append((cell, (heading + 1) % 4))  # RotateRight
        for ncell, nheading in nxt:
            i = _pose_index(ncell, nheading, w)
            if dist[i] == UNREACHABLE:
                dist[i] = d + 1
                queue.append((ncell, nheading))
    per_pose = dist.reshape(h, w, 4)
    any_heading = np.where(
        (per_pose == UNREACHABLE).all(axis=2), UNREACHABLE,
        np.where(per_pose == UNREACHABLE, np.iinfo(np.int32).max, per_pose).min(axis=2))
    any_heading[grid.occupancy] = UNREACHABLE
    return any_heading.astype(np.int32)


def action_distance(grid: GridMap, start: AgentPose, goal: Cell) -> int:
    """Minimum action count from start pose to the goal cell, any final
    heading; UNREACHABLE if no pose path exists. goal == start cell is 0."""
    if not grid.is_free(goal):
        raise ValueError(f"goal {goal} is not a free cell")
    return int(action_distance_field(grid, start)[goal])


# Raw action names shared with the engine.
FORWARD, ROTATE_LEFT, ROTATE_RIGHT, STOP = "Forward", "RotateLeft", "RotateRight", "Stop"


def min_action_path(grid: GridMap, start: AgentPose, goal: Cell,
                    prefer_short: bool = False) -> list[str] | None:
    """Action sequence realizing the minimum-action pose path to ``goal``.

    With prefer_short, ties between minimum-action paths are broken toward
    fewer Forward moves, so the returned path is also metrically shortest
    whenever a shortest-in-meters minimum-action path exists (the intercept
    oracle relies on this to report path lengths equal to the geodesic).
    Returns None when the goal is unreachable.
    """
    if not grid.is_free(goal):
        return None
    if goal == start.cell:
        return []
    import heapq

    w = grid.width
    best: dict[int, tuple[int, int]] = {}
    start_i = _pose_index(start.cell, start.heading, w)
    best[start_i] = (0, 0)
    parent: dict[int, tuple[int, str]] = {}
    counter = 0
    heap = [((0, 0), counter, start.cell, start.heading)]
    goal_pose = None
    while heap:
        cost, _, cell, heading = heapq.heappop(heap)
        i = _pose_index(cell, heading, w)
        if best.get(i, (np.inf, np.inf)) < cost:
            continue
        if cell == goal:
            goal_pose = i
            break
        actions, forwards = cost
        dr, dc = HEADING_VECTORS[heading]
        fwd = (cell[0] + dr, cell[1] + dc)
        moves = []
        if grid.is_free(fwd):
            moves.append((fwd, heading, FORWARD))
        moves.append((cell, (heading - 1) % 4, ROTATE_LEFT))
        moves.append((cell, (heading + 1) % 4, ROTATE_RIGHT))
        for ncell, nheading, act in moves:
            fstep = 1 if (act == FORWARD and prefer_short) else 0
            ncost = (actions + 1, forwards + fstep)
            ni = _pose_index(ncell, nheading, w)
            if ncost < best.get(ni, (np.inf, np.inf)):
                best[ni] = ncost
                parent[ni] = (i, act)
                counter += 1
                heapq.heappush(heap, (ncost, counter, ncell, nheading))
    if goal_pose is None:
        return None
    path = []
    i = goal_pose
    while i != start_i:
        i, act = parent[i]
        path.append(act)
    path.reverse()
    return path


# ---------------------------------------------------------------------------
# Range sensing and the geometric map
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RangeScan:
    """Ray-cast range scan (depth-sensor proxy).

    Ranges are quantized to cell transitions: a ray that hits an occupied
    cell after k DDA steps reports k * resolution, capped at max_range.
    ``traversed`` carries the free cells each ray crossed (agent cell
    included) so the geometric map can be updated without the true map.
    """

    ray_count: int
    fov_deg: float
    max_range: float
    ranges: tuple[float, ...]
    hit_cells: tuple[Cell | None, ...]
    traversed: tuple[tuple[Cell, ...], ...]

    def __post_init__(self):
        if len(self.ranges) != self.ray_count or len(self.hit_cells) != self.ray_count:
            raise ValueError("per-ray arrays must have ray_count entries")


def _dda_cells(grid: GridMap, origin: Cell, angle: float, max_steps: int):
    """Cells visited by a ray from the center of ``origin`` at world angle
    ``angle`` (East = 0, CCW). Amanatides-Woo traversal; on exact corner
    crossings the column step is taken first."""
    dx = np.cos(angle)
    dy = np.sin(angle)
    dr, dc = -dy, dx  # row axis points down
    r, c = origin
    step_r = 0 if abs(dr) < 1e-12 else (1 if dr > 0 else -1)
    step_c = 0 if abs(dc) < 1e-12 else (1 if dc > 0 else -1)
    t_max_r = np.inf if step_r == 0 else 0.5 / abs(dr)
    t_max_c = np.inf if step_c == 0 else 0.5 / abs(dc)
    t_delta_r = np.inf if step_r == 0 else 1.0 / abs(dr)
    t_delta_c = np.inf if step_c == 0 else 1.0 / abs(dc)
    cells = []
    for _ in range(max_steps):
        if t_max_c <= t_max_r:
            c += step_c
            t_max_c += t_delta_c
        else:
            r += step_r
            t_max_r += t_delta_r
        cells.append((r, c))
    return cells


def ray_scan(grid: GridMap, pose: AgentPose, ray_count: int = 16,
             fov_deg: float = 90.0, max_range: float = 4.0) -> RangeScan:
    """Cast ``ray_count`` rays evenly spaced across ``fov_deg`` centered on
    the agent's heading. Each ray marches until it enters an occupied cell
    or exceeds floor(max_range / resolution) transitions."""
    if not grid.is_free(pose.cell):
        raise ValueError("pose cell is not free")
    if ray_count < 1:
        raise ValueError("ray_count must be positive")
    center = HEADING_ANGLES[pose.heading]
    if ray_count == 1:
        offsets = np.array([0.0])
    else:
        half = np.deg2rad(fov_deg) / 2.0
        offsets = np.linspace(-half, half, ray_count)
    max_steps = int(np.floor(max_range / grid.resolution))

    ranges, hits, traversed = [], [], []
    for off in offsets:
        cells = _dda_cells(grid, pose.cell, center + off, max_steps)
        free_crossed = [pose.cell]
        hit = None
        rng_m = max_range
        for k, cell in enumerate(cells, start=1):
            if grid.occupancy[cell]:
                hit = cell
                rng_m = k * grid.resolution
                break
            free_crossed.append(cell)
        ranges.append(min(rng_m, max_range))
        hits.append(hit)
        traversed.append(tuple(free_crossed))
    return RangeScan(ray_count=ray_count, fov_deg=fov_deg, max_range=max_range,
                     ranges=tuple(ranges), hit_cells=tuple(hits),
                     traversed=tuple(traversed))


@dataclass
class GeometricMap:
    """Allocentric two-channel map built from scans: explored and occupied.

    Updates are monotone in the explored channel; occupied implies explored.
    """

    explored: np.ndarray
    occupied: np.ndarray

    @classmethod
    def empty(cls, height: int, width: int) -> "GeometricMap":
        return cls(explored=np.zeros((height, width), dtype=bool),
                   occupied=np.zeros((height, width), dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.explored.shape

    def copy(self) -> "GeometricMap":
        return GeometricMap(self.explored.copy(), self.occupied.copy())

    def as_tensor(self) -> np.ndarray:
        """Stacked float32 channels [2, H, W] for learned consumers."""
        return np.stack([self.explored, self.occupied]).astype(np.float32)


def update_geometric_map(gmap: GeometricMap, pose: AgentPose, scan: RangeScan) -> GeometricMap:
    """Mark ray-traversed cells explored+free and hit cells explored+occupied.

    Mutates and returns ``gmap``. Cells untouched by the scan are unchanged.
    """
    h, w = gmap.shape
    for ray_cells, hit in zip(scan.traversed, scan.hit_cells):
        for r, c in ray_cells:
            if not (0 <= r < h and 0 <= c < w):
                raise ValueError("scan does not fit the geometric map")
            gmap.explored[r, c] = True
            gmap.occupied[r, c] = False
        if hit is not None:
            r, c = hit
            if not (0 <= r < h and 0 <= c < w):
                raise ValueError("scan does not fit the geometric map")
            gmap.explored[r, c] = True
            gmap.occupied[r, c] = True
    return gmap
