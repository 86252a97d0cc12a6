"""Agent-side mapping: ray-cast sensing, map fusion, distance fields, paths, state tensors.

The agent never reads ground truth directly. It sees the world through a
field-of-view cone, fuses observations into global maps that can go stale,
and builds a 4-channel egocentric tensor from those maps.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .envs import EnvSpec, RESOLUTION, cell_center, point_to_cell, rasterize_walls, receptacle_mask

# Overhead map cell codes.
UNOBSERVED = 0
FREE = 1
RECEPTACLE = 2
OBJECT = 3
WALL = 4

# Occupancy map cell codes.
UNKNOWN = 0
KNOWN_FREE = 1
OCCUPIED = 2

# Scalar encoding of overhead codes for the network input; unobserved must be 0
# and out-of-crop padding uses the wall value.
OVERHEAD_ENCODING = np.array([0.0, 0.25, 0.5, 0.75, 1.0], dtype=np.float32)

SQRT2 = math.sqrt(2.0)

# 8-connected neighborhood: (drow, dcol, is_diagonal)
NEIGHBORS_8 = (
    (-1, -1, True), (-1, 0, False), (-1, 1, True),
    (0, -1, False), (0, 1, False),
    (1, -1, True), (1, 0, False), (1, 1, True),
)


@dataclass(frozen=True)
class SensorParams:
    fov: float = math.pi / 2  # full cone angle
    range: float = 1.0
    los_step: float = RESOLUTION / 8  # sampling step for line-of-sight checks


@dataclass
class Observation:
    """Cells visible from one pose, with their true contents."""

    cells: np.ndarray  # (K, 2) int32 (row, col)
    overhead: np.ndarray  # (K,) uint8 overhead codes
    occupied: np.ndarray  # (K,) bool, True for wall cells


@dataclass
class GlobalMaps:
    """The agent's fused view of the world; cells stay stale until re-observed."""

    overhead: np.ndarray  # (ny, nx) uint8
    occupancy: np.ndarray  # (ny, nx) uint8
    resolution: float = RESOLUTION
    occupancy_rev: int = 0  # bumped whenever fusion changes any occupancy cell

    @classmethod
    def blank(cls, shape: tuple[int, int]) -> "GlobalMaps":
        return cls(
            overhead=np.zeros(shape, dtype=np.uint8),
            occupancy=np.zeros(shape, dtype=np.uint8),
        )


def sense(world, sensor: SensorParams = SensorParams()) -> Observation:
    """Cells visible from the robot pose within the sensor cone; walls occlude.

    Visibility is checked by sampling the segment from the robot position to
    each candidate cell center: a cell is visible when no sample before the
    target cell falls inside a wall cell. The robot's own footprint is always
    observed. Objects do not occlude (they are floor-height discs).
    """
    spec = world.env
    shape = spec.grid_shape()
    walls = world.wall_grid
    rx, ry, theta = world.robot.x, world.robot.y, world.robot.theta

    xs, ys = _cached_centers(spec)
    dx = xs - rx
    dy = ys - ry
    dist = np.hypot(dx, dy)
    bearing = np.arctan2(dy, dx)
    ang_err = np.abs(_wrap_array(bearing - theta))
    in_cone = (dist <= sensor.range) & (ang_err <= sensor.fov / 2)
    in_cone |= dist <= world.params.robot_radius  # own footprint

    cand_iy, cand_ix = np.nonzero(in_cone)
    if cand_iy.size == 0:
        return Observation(np.zeros((0, 2), np.int32), np.zeros(0, np.uint8), np.zeros(0, bool))

    # Sample T points along each segment, fractions (j+0.5)/T of the way there.
    n_steps = max(2, int(math.ceil(sensor.range / sensor.los_step)))
    fracs = (np.arange(n_steps) + 0.5) / n_steps
    tx = dx[cand_iy, cand_ix]
    ty = dy[cand_iy, cand_ix]
    px = rx + np.outer(tx, fracs)
    py = ry + np.outer(ty, fracs)
    siy = np.clip(np.floor(py / RESOLUTION).astype(np.int32), 0, shape[0] - 1)
    six = np.clip(np.floor(px / RESOLUTION).astype(np.int32), 0, shape[1] - 1)
    hit_wall = walls[siy, six]
    at_target = (siy == cand_iy[:, None]) & (six == cand_ix[:, None])
    blocked = np.any(hit_wall & ~at_target, axis=1)
    vis_iy = cand_iy[~blocked]
    vis_ix = cand_ix[~blocked]

    overhead = np.full(vis_iy.shape, FREE, dtype=np.uint8)
    overhead[world.receptacle_grid[vis_iy, vis_ix]] = RECEPTACLE
    obj_grid = _object_grid(world)
    overhead[obj_grid[vis_iy, vis_ix]] = OBJECT
    wall_here = walls[vis_iy, vis_ix]
    overhead[wall_here] = WALL

    cells = np.stack([vis_iy, vis_ix], axis=1).astype(np.int32)
    return Observation(cells, overhead, wall_here.copy())


def fuse(maps: GlobalMaps, obs: Observation) -> GlobalMaps:
    """Overwrite observed cells; everything else keeps its (possibly stale) value."""
    overhead = maps.overhead.copy()
    occupancy = maps.occupancy.copy()
    rev = maps.occupancy_rev
    if obs.cells.shape[0]:
        iy, ix = obs.cells[:, 0], obs.cells[:, 1]
        overhead[iy, ix] = obs.overhead
        new_occ = np.where(obs.occupied, OCCUPIED, KNOWN_FREE).astype(np.uint8)
        if np.any(occupancy[iy, ix] != new_occ):
            rev += 1
        occupancy[iy, ix] = new_occ
    return GlobalMaps(overhead, occupancy, maps.resolution, rev)


def distance_field(
    occupancy: np.ndarray,
    sources: np.ndarray | list[tuple[int, int]],
    treat_unknown_as: str = "occupied",
    resolution: float = RESOLUTION,
) -> np.ndarray:
    """8-connected shortest-path distances from the source cells.

    Axial moves cost `resolution`, diagonal moves `resolution * sqrt(2)`.
    Occupied cells (and unknown ones, when treated as occupied) are infinite
    and block propagation; occupied sources are skipped.

    Distances are tracked as exact (axial, diagonal) step counts and only
    converted to floats through the single canonical expression
    ``na * resolution + nd * (resolution * sqrt(2))``, so equal-length paths
    always produce bit-identical values regardless of visit order.
    """
    if treat_unknown_as == "occupied":
        blocked = occupancy != KNOWN_FREE
    elif treat_unknown_as == "free":
        blocked = occupancy == OCCUPIED
    else:
        raise ValueError(f"treat_unknown_as must be 'free' or 'occupied', got {treat_unknown_as!r}")

    ny, nx = occupancy.shape
    n = ny * nx
    blocked_flat = blocked.ravel()
    diag_cost = resolution * SQRT2

    dist = np.full(n, np.inf)
    counts_a = np.zeros(n, dtype=np.int32)
    counts_d = np.zeros(n, dtype=np.int32)
    done = np.zeros(n, dtype=bool)

    heap: list[tuple[float, int, int, int]] = []
    src = np.asarray(list(sources) if not isinstance(sources, np.ndarray) else sources)
    if src.ndim == 1:
        src = src.reshape(1, 2)
    for iy, ix in src:
        flat = int(iy) * nx + int(ix)
        if blocked_flat[flat]:
            continue
        if dist[flat] != 0.0:
            dist[flat] = 0.0
            heapq.heappush(heap, (0.0, flat, 0, 0))

    while heap:
        d, flat, na, nd = heapq.heappop(heap)
        if done[flat]:
            continue
        done[flat] = True
        counts_a[flat], counts_d[flat] = na, nd
        iy, ix = divmod(flat, nx)
        for dy_, dx_, diag in NEIGHBORS_8:
            jy, jx = iy + dy_, ix + dx_
            if not (0 <= jy < ny and 0 <= jx < nx):
                continue
            jflat = jy * nx + jx
            if done[jflat] or blocked_flat[jflat]:
                continue
            if diag:
                cna, cnd = na, nd + 1
            else:
                cna, cnd = na + 1, nd
            cand = cna * resolution + cnd * diag_cost
            if cand < dist[jflat]:
                dist[jflat] = cand
                heapq.heappush(heap, (cand, jflat, cna, cnd))

    return dist.reshape(ny, nx)


def plan_path(
    occupancy: np.ndarray,
    frm: tuple[int, int],
    to: tuple[int, int],
    resolution: float = RESOLUTION,
) -> list[tuple[int, int]]:
    """Greedy descent of the goal-sourced distance field, from `frm` to `to`.

    Unknown cells block (conservative). If `to` is unreachable, the path leads
    to the reachable cell nearest `to` (Euclidean over cell centers, ties by
    lowest flat index). Always returns at least [frm].
    """
    ny, nx = occupancy.shape
    if occupancy[frm] == OCCUPIED:
        return [frm]
    if frm == to:
        return [frm]

    fld = distance_field(occupancy, [to], "occupied", resolution)
    if not np.isfinite(fld[frm]):
        reach = distance_field(occupancy, [frm], "occupied", resolution)
        finite = np.isfinite(reach)
        if not finite.any():
            return [frm]
        iys, ixs = np.nonzero(finite)
        d2 = (iys - to[0]) ** 2 + (ixs - to[1]) ** 2
        best = int(np.argmin(d2))  # argmin keeps the lowest flat index on ties
        goal = (int(iys[best]), int(ixs[best]))
        if goal == frm:
            return [frm]
        fld = distance_field(occupancy, [goal], "occupied", resolution)

    path = [frm]
    cur = frm
    while fld[cur] > 0.0:
        best_val = np.inf
        best_cell = None
        for dy_, dx_, _ in NEIGHBORS_8:
            jy, jx = cur[0] + dy_, cur[1] + dx_
            if 0 <= jy < ny and 0 <= jx < nx and fld[jy, jx] < best_val:
                best_val = fld[jy, jx]
                best_cell = (jy, jx)
        if best_cell is None or best_val >= fld[cur]:  # defensive; fields have no local minima
            break
        cur = best_cell
        path.append(cur)
    return path


@dataclass
class EgoFrame:
    """Shared egocentric frame: origin at the robot's cell center, heading 'up'."""

    crop: int
    origin: tuple[float, float]
    theta: float

    @property
    def center_cell(self) -> tuple[int, int]:
        return (self.crop // 2, self.crop // 2)

    def cell_to_world(self, cell: tuple[int, int]) -> tuple[float, float]:
        cr, cc = self.center_cell
        fwd = (cr - cell[0]) * RESOLUTION
        right = (cell[1] - cc) * RESOLUTION
        c, s = math.cos(self.theta), math.sin(self.theta)
        ox, oy = self.origin
        return (ox + fwd * c + right * s, oy + fwd * s - right * c)

    def world_to_cell(self, point: tuple[float, float]) -> tuple[int, int]:
        cr, cc = self.center_cell
        ox, oy = self.origin
        dx, dy = point[0] - ox, point[1] - oy
        c, s = math.cos(self.theta), math.sin(self.theta)
        fwd = dx * c + dy * s
        right = dx * s - dy * c
        return (cr - int(round(fwd / RESOLUTION)), cc + int(round(right / RESOLUTION)))


def ego_frame(pose, crop: int) -> EgoFrame:
    """Frame anchored at the center of the cell under the robot."""
    origin = cell_center(point_to_cell(pose.x, pose.y))
    return EgoFrame(crop, origin, pose.theta)


def egocentric_state(
    maps: GlobalMaps,
    pose,
    receptacle_cells: np.ndarray,
    crop: int,
    diagonal: float,
    robot_radius: float,
    dist_to_receptacle: np.ndarray | None = None,
    dist_from_agent: np.ndarray | None = None,
) -> np.ndarray:
    """4-channel egocentric crop: overhead, agent footprint, and two distance maps.

    The global maps are rotated by -pose.theta about the robot's cell center
    (nearest-neighbor sampling, exact at 90-degree multiples) and cropped to
    crop x crop cells. Out-of-bounds cells read as wall. Distance channels are
    normalized by the environment diagonal with unreachable/unknown cells at 1.
    The to-receptacle field treats unknown cells as traversable so the gradient
    is informative before the map is complete; the from-agent field matches the
    planner and treats unknown as blocking.
    """
    frame = ego_frame(pose, crop)
    ny, nx = maps.overhead.shape

    if dist_to_receptacle is None:
        dist_to_receptacle = distance_field(maps.occupancy, receptacle_cells, "free")
    if dist_from_agent is None:
        robot_cell = point_to_cell(pose.x, pose.y)
        dist_from_agent = distance_field(maps.occupancy, [robot_cell], "occupied")

    cr, cc = frame.center_cell
    rows = np.arange(crop)
    cols = np.arange(crop)
    fwd = (cr - rows)[:, None] * RESOLUTION
    right = (cols - cc)[None, :] * RESOLUTION
    c, s = math.cos(frame.theta), math.sin(frame.theta)
    ox, oy = frame.origin
    px = ox + fwd * c + right * s
    py = oy + fwd * s - right * c
    ix = np.floor(px / RESOLUTION).astype(np.int64)
    iy = np.floor(py / RESOLUTION).astype(np.int64)
    inb = (iy >= 0) & (iy < ny) & (ix >= 0) & (ix < nx)
    iy_c = np.clip(iy, 0, ny - 1)
    ix_c = np.clip(ix, 0, nx - 1)

    ch0 = np.where(inb, OVERHEAD_ENCODING[maps.overhead[iy_c, ix_c]], OVERHEAD_ENCODING[WALL])

    ch1 = np.zeros((crop, crop), dtype=np.float32)
    r_cells = int(math.floor(robot_radius / RESOLUTION))
    for dr in range(-r_cells, r_cells + 1):
        for dc in range(-r_cells, r_cells + 1):
            if math.hypot(dr, dc) * RESOLUTION <= robot_radius:
                rr, rc = cr + dr, cc + dc
                if 0 <= rr < crop and 0 <= rc < crop:
                    ch1[rr, rc] = 1.0

    def norm_channel(fld: np.ndarray) -> np.ndarray:
        vals = fld[iy_c, ix_c] / diagonal
        vals = np.where(np.isfinite(vals), np.clip(vals, 0.0, 1.0), 1.0)
        return np.where(inb, vals, 1.0)

    ch2 = norm_channel(dist_to_receptacle)
    ch3 = norm_channel(dist_from_agent)

    return np.stack([ch0, ch1, ch2, ch3]).astype(np.float32)


def receptacle_source_cells(spec: EnvSpec) -> np.ndarray:
    """(K, 2) array of receptacle cells, used as distance-field sources."""
    mask = receptacle_mask(spec)
    iy, ix = np.nonzero(mask)
    return np.stack([iy, ix], axis=1).astype(np.int64)


def _wrap_array(a: np.ndarray) -> np.ndarray:
    return np.mod(a + np.pi, 2 * np.pi) - np.pi


_CENTER_CACHE: dict[tuple[str, tuple[int, int]], tuple[np.ndarray, np.ndarray]] = {}


def _cached_centers(spec: EnvSpec):
    key = (spec.kind, spec.grid_shape())
    if key not in _CENTER_CACHE:
        from .envs import cell_centers_grid

        _CENTER_CACHE[key] = cell_centers_grid(spec.grid_shape())
    return _CENTER_CACHE[key]


def _object_grid(world) -> np.ndarray:
    shape = world.env.grid_shape()
    grid = np.zeros(shape, dtype=bool)
    active = ~world.obj_removed
    if active.any():
        pos = world.obj_pos[active]
        iy = np.clip(np.floor(pos[:, 1] / RESOLUTION).astype(int), 0, shape[0] - 1)
        ix = np.clip(np.floor(pos[:, 0] / RESOLUTION).astype(int), 0, shape[1] - 1)
        grid[iy, ix] = True
    return grid
