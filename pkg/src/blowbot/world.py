"""Ground-truth simulation: robot kinematics, disc objects, blown air particles.

The world is a top-down 2D box. The robot is a disc that turns in place or
drives along planned paths; blowing shoots short-lived particles from a nozzle
on the robot's rim, and particle impacts impart impulses on the object discs.
Everything is integrated at a fixed substep and is bit-deterministic for a
given seed and action sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .envs import EnvSpec, RESOLUTION, Rect, cell_center, point_to_cell, rasterize_walls, receptacle_mask
from .errors import PhysicsFault, PlacementError
from .mapping import KNOWN_FREE, OCCUPIED, distance_field, receptacle_source_cells

MAX_PLACEMENT_ATTEMPTS = 10_000


def wrap_angle(a: float) -> float:
    """Wrap into [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass
class Pose:
    x: float
    y: float
    theta: float  # [-pi, pi)


@dataclass(frozen=True)
class SimParams:
    dt: float = 1.0 / 120.0
    robot_radius: float = 0.04
    robot_speed: float = 0.2  # m/s
    robot_turn_rate: float = math.pi  # rad/s

    object_radius: float = 0.005  # 10 mm discs
    object_mass: float = 0.004  # kg
    object_drag: float = 1.5  # 1/s linear drag; 0.3 m/s stops in ~0.2 m
    object_stop_speed: float = 0.01  # m/s velocity floor
    object_restitution: float = 0.2  # against walls
    object_pair_restitution: float = 0.5

    blow_force: float = 0.35
    nozzle_offset: float = 0.0  # -pi/2 for the side blower
    particle_speed_ref: float = 2.0  # m/s at force 1.0
    particle_mass: float = 2e-4  # kg
    particle_radius: float = 0.002
    particles_per_substep: int = 5
    particle_cone_half_angle: float = math.radians(15.0)
    particle_life: float = 0.5  # s
    particle_range: float = 0.6  # m travel cap
    particle_wall_restitution: float = 0.6
    impulse_gain: float = 1.0  # fraction of particle momentum transferred per hit

    contact_tolerance: float = 0.001


@dataclass
class StepEvents:
    """Reward-relevant events accumulated over one or more substeps."""

    entered: int = 0
    dist_deltas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    collision: bool = False
    substeps: int = 0

    @classmethod
    def zero(cls, num_objects: int) -> "StepEvents":
        return cls(dist_deltas=np.zeros(num_objects))

    def merge(self, other: "StepEvents") -> None:
        self.entered += other.entered
        self.dist_deltas = self.dist_deltas + other.dist_deltas
        self.collision = self.collision or other.collision
        self.substeps += other.substeps


@lru_cache(maxsize=16)
def static_geometry(env: EnvSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(wall grid, receptacle mask, static receptacle-distance field) for a layout.

    Cached per spec; callers must treat the arrays as read-only.
    """
    wall_grid = rasterize_walls(env)
    rec_grid = receptacle_mask(env)
    static_occ = np.where(wall_grid, OCCUPIED, KNOWN_FREE).astype(np.uint8)
    static_dist = distance_field(static_occ, receptacle_source_cells(env), "occupied")
    for a in (wall_grid, rec_grid, static_dist):
        a.setflags(write=False)
    return wall_grid, rec_grid, static_dist


@dataclass(frozen=True)
class TurnInPlace:
    target: tuple[float, float]
    blower_on: bool = False


@dataclass(frozen=True)
class MoveTo:
    path: tuple[tuple[int, int], ...]  # grid cells, starting at the robot's cell
    blower_on: bool = False


Primitive = TurnInPlace | MoveTo


class WorldState:
    """Mutable ground-truth state plus static geometry caches."""

    def __init__(self, env: EnvSpec, params: SimParams, robot: Pose, obj_pos: np.ndarray,
                 rng: np.random.Generator):
        self.env = env
        self.params = params
        self.robot = robot
        self.obj_pos = obj_pos.astype(np.float64)
        self.obj_vel = np.zeros_like(self.obj_pos)
        self.obj_removed = np.zeros(len(obj_pos), dtype=bool)
        self.p_pos = np.zeros((0, 2))
        self.p_vel = np.zeros((0, 2))
        self.p_life = np.zeros(0)
        self.p_range = np.zeros(0)
        self.rng = rng
        self.sim_time = 0.0

        # Static free-space distances to the receptacle drive partial rewards.
        self.wall_grid, self.receptacle_grid, self.static_dist = static_geometry(env)
        self.obj_dist = self._lookup_distances()

    @property
    def num_objects(self) -> int:
        return len(self.obj_pos)

    def active_count(self) -> int:
        return int((~self.obj_removed).sum())

    def _lookup_distances(self) -> np.ndarray:
        ny, nx = self.static_dist.shape
        iy = np.clip(np.floor(self.obj_pos[:, 1] / RESOLUTION).astype(int), 0, ny - 1)
        ix = np.clip(np.floor(self.obj_pos[:, 0] / RESOLUTION).astype(int), 0, nx - 1)
        d = self.static_dist[iy, ix]
        d = np.where(np.isfinite(d), d, 0.0)
        d[self.obj_removed] = 0.0
        return d

    def clone(self) -> "WorldState":
        other = object.__new__(WorldState)
        other.env = self.env
        other.params = self.params
        other.robot = Pose(self.robot.x, self.robot.y, self.robot.theta)
        other.obj_pos = self.obj_pos.copy()
        other.obj_vel = self.obj_vel.copy()
        other.obj_removed = self.obj_removed.copy()
        other.p_pos = self.p_pos.copy()
        other.p_vel = self.p_vel.copy()
        other.p_life = self.p_life.copy()
        other.p_range = self.p_range.copy()
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = self.rng.bit_generator.state
        other.rng = rng
        other.sim_time = self.sim_time
        other.wall_grid = self.wall_grid
        other.receptacle_grid = self.receptacle_grid
        other.static_dist = self.static_dist
        other.obj_dist = self.obj_dist.copy()
        return other

    def signature(self) -> tuple:
        """Hashable snapshot for bit-exact determinism checks."""
        return (
            round(self.robot.x, 15), round(self.robot.y, 15), round(self.robot.theta, 15),
            self.obj_pos.tobytes(), self.obj_vel.tobytes(), self.obj_removed.tobytes(),
            self.p_pos.tobytes(), self.p_vel.tobytes(),
        )


def reset(spec: EnvSpec, seed: int, params: SimParams = SimParams()) -> WorldState:
    """Seeded episode initialization: scattered objects, random collision-free robot pose."""
    rng = np.random.default_rng(seed)
    r_obj = params.object_radius
    positions = []
    attempts = 0
    while len(positions) < spec.num_objects:
        attempts += 1
        if attempts > MAX_PLACEMENT_ATTEMPTS:
            raise PlacementError(
                f"could not place {spec.num_objects} objects in {spec.kind} "
                f"after {MAX_PLACEMENT_ATTEMPTS} attempts")
        x = rng.uniform(r_obj, spec.width - r_obj)
        y = rng.uniform(r_obj, spec.height - r_obj)
        if any(w.distance(x, y) < r_obj for w in spec.walls):
            continue
        if spec.receptacle.contains(x, y):
            continue
        if any((x - px) ** 2 + (y - py) ** 2 < (2 * r_obj + 0.001) ** 2 for px, py in positions):
            continue
        positions.append((x, y))

    r_rob = params.robot_radius
    attempts = 0
    while True:
        attempts += 1
        if attempts > MAX_PLACEMENT_ATTEMPTS:
            raise PlacementError(f"could not place the robot in {spec.kind}")
        x = rng.uniform(r_rob, spec.width - r_rob)
        y = rng.uniform(r_rob, spec.height - r_rob)
        if any(w.distance(x, y) < r_rob for w in spec.walls):
            continue
        if spec.receptacle.contains(x, y):
            continue
        if any((x - px) ** 2 + (y - py) ** 2 < (r_rob + r_obj) ** 2 for px, py in positions):
            continue
        theta = wrap_angle(rng.uniform(-math.pi, math.pi))
        robot = Pose(x, y, theta)
        break

    return WorldState(spec, params, robot, np.array(positions), rng)


def emit_blow(world: WorldState, force: float | None = None) -> int:
    """Spawn one substep's worth of particles from the nozzle; returns the count.

    Particle speed is force * particle_speed_ref, directions uniform inside the
    nozzle cone. force == 0 is the blower-off no-op.
    """
    p = world.params
    if force is None:
        force = p.blow_force
    if force == 0.0:
        return 0
    if force < 0.0:
        raise ValueError(f"blow force must be non-negative, got {force}")
    n = p.particles_per_substep
    nozzle_dir = world.robot.theta + p.nozzle_offset
    nx = world.robot.x + p.robot_radius * math.cos(nozzle_dir)
    ny = world.robot.y + p.robot_radius * math.sin(nozzle_dir)
    angles = nozzle_dir + world.rng.uniform(-p.particle_cone_half_angle,
                                            p.particle_cone_half_angle, n)
    speed = force * p.particle_speed_ref
    vel = speed * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    pos = np.full((n, 2), (nx, ny))
    world.p_pos = np.concatenate([world.p_pos, pos])
    world.p_vel = np.concatenate([world.p_vel, vel])
    world.p_life = np.concatenate([world.p_life, np.full(n, p.particle_life)])
    world.p_range = np.concatenate([world.p_range, np.full(n, p.particle_range)])
    return n


def _disc_wall_resolve(pos: np.ndarray, vel: np.ndarray, radius: float,
                       walls: tuple[Rect, ...], restitution: float) -> None:
    """Push disc centers out of wall rectangles in place, reflecting velocity."""
    for w in walls:
        if len(pos) == 0:
            continue
        qx = np.clip(pos[:, 0], w.x0, w.x1)
        qy = np.clip(pos[:, 1], w.y0, w.y1)
        dx = pos[:, 0] - qx
        dy = pos[:, 1] - qy
        d2 = dx * dx + dy * dy
        hit = d2 < radius * radius
        if not hit.any():
            continue
        idx = np.nonzero(hit)[0]
        for i in idx:
            d = math.sqrt(d2[i])
            if d > 1e-12:
                nx_, ny_ = dx[i] / d, dy[i] / d
            else:
                # Center inside the rect: exit through the nearest face.
                pen = [pos[i, 0] - w.x0, w.x1 - pos[i, 0], pos[i, 1] - w.y0, w.y1 - pos[i, 1]]
                f = int(np.argmin(pen))
                nx_, ny_ = [(-1, 0), (1, 0), (0, -1), (0, 1)][f]
                qx_, qy_ = pos[i, 0], pos[i, 1]
                if f == 0:
                    qx_ = w.x0
                elif f == 1:
                    qx_ = w.x1
                elif f == 2:
                    qy_ = w.y0
                else:
                    qy_ = w.y1
                qx[i], qy[i] = qx_, qy_
            pos[i, 0] = qx[i] + nx_ * radius
            pos[i, 1] = qy[i] + ny_ * radius
            vn = vel[i, 0] * nx_ + vel[i, 1] * ny_
            if vn < 0.0:
                vel[i, 0] -= (1.0 + restitution) * vn * nx_
                vel[i, 1] -= (1.0 + restitution) * vn * ny_


def _particles_reflect(world: WorldState) -> None:
    p = world.params
    pos, vel = world.p_pos, world.p_vel
    if len(pos) == 0:
        return
    for w in world.env.walls:
        inside = ((pos[:, 0] > w.x0) & (pos[:, 0] < w.x1) &
                  (pos[:, 1] > w.y0) & (pos[:, 1] < w.y1))
        if not inside.any():
            continue
        for i in np.nonzero(inside)[0]:
            pen = [pos[i, 0] - w.x0, w.x1 - pos[i, 0], pos[i, 1] - w.y0, w.y1 - pos[i, 1]]
            f = int(np.argmin(pen))
            if f == 0:
                pos[i, 0] = w.x0 - (pos[i, 0] - w.x0)
                vel[i, 0] = -abs(vel[i, 0]) * p.particle_wall_restitution
            elif f == 1:
                pos[i, 0] = w.x1 + (w.x1 - pos[i, 0])
                vel[i, 0] = abs(vel[i, 0]) * p.particle_wall_restitution
            elif f == 2:
                pos[i, 1] = w.y0 - (pos[i, 1] - w.y0)
                vel[i, 1] = -abs(vel[i, 1]) * p.particle_wall_restitution
            else:
                pos[i, 1] = w.y1 + (w.y1 - pos[i, 1])
                vel[i, 1] = abs(vel[i, 1]) * p.particle_wall_restitution


def step_physics(world: WorldState, dt: float | None = None,
                 robot_vel: tuple[float, float] = (0.0, 0.0)) -> StepEvents:
    """Advance particles and objects by one substep; returns the step's events.

    `robot_vel` is the robot's current translational velocity, used for push
    contact when the robot is driving. The robot pose itself is moved by the
    primitives, not here.
    """
    p = world.params
    if dt is None:
        dt = p.dt
    events = StepEvents.zero(world.num_objects)
    events.substeps = 1

    # Particles fly ballistically, reflect off walls, and die on expiry or hit.
    if len(world.p_pos):
        world.p_pos += world.p_vel * dt
        world.p_life -= dt
        world.p_range -= np.hypot(world.p_vel[:, 0], world.p_vel[:, 1]) * dt
        _particles_reflect(world)

    active = ~world.obj_removed
    hit_mask = np.zeros(len(world.p_pos), dtype=bool)
    if len(world.p_pos) and active.any():
        apos = world.obj_pos[active]
        diff = world.p_pos[:, None, :] - apos[None, :, :]
        d2 = np.einsum("pok,pok->po", diff, diff)
        contact = (p.object_radius + p.particle_radius) ** 2
        hits = d2 < contact
        hit_mask = hits.any(axis=1)
        if hit_mask.any():
            nearest = np.argmin(np.where(hits, d2, np.inf), axis=1)
            pidx = np.nonzero(hit_mask)[0]
            oidx = np.nonzero(active)[0][nearest[pidx]]
            speeds = np.hypot(world.p_vel[pidx, 0], world.p_vel[pidx, 1])
            ok = speeds > 1e-12
            pidx, oidx, speeds = pidx[ok], oidx[ok], speeds[ok]
            dv = (p.impulse_gain * p.particle_mass / p.object_mass) * world.p_vel[pidx]
            np.add.at(world.obj_vel, oidx, dv)
            hit_tmp = np.zeros(len(world.p_pos), dtype=bool)
            hit_tmp[pidx] = True
            hit_mask = hit_tmp

    if len(world.p_pos):
        keep = (world.p_life > 0.0) & (world.p_range > 0.0) & ~hit_mask
        world.p_pos = world.p_pos[keep]
        world.p_vel = world.p_vel[keep]
        world.p_life = world.p_life[keep]
        world.p_range = world.p_range[keep]

    # Objects: linear drag with a hard stop floor, then integrate.
    if active.any():
        factor = max(0.0, 1.0 - p.object_drag * dt)
        world.obj_vel[active] *= factor
        speeds = np.hypot(world.obj_vel[:, 0], world.obj_vel[:, 1])
        world.obj_vel[active & (speeds < p.object_stop_speed)] = 0.0
        world.obj_pos[active] += world.obj_vel[active] * dt

        _resolve_object_pairs(world)
        _resolve_robot_push(world, robot_vel)
        idx = np.nonzero(active)[0]
        pos_view = world.obj_pos[idx]
        vel_view = world.obj_vel[idx]
        _disc_wall_resolve(pos_view, vel_view, p.object_radius, world.env.walls,
                           p.object_restitution)
        world.obj_pos[idx] = pos_view
        world.obj_vel[idx] = vel_view

        # Removal: the instant a center enters the receptacle.
        r = world.env.receptacle
        inside = (active & (world.obj_pos[:, 0] >= r.x0) & (world.obj_pos[:, 0] <= r.x1) &
                  (world.obj_pos[:, 1] >= r.y0) & (world.obj_pos[:, 1] <= r.y1))
        if inside.any():
            world.obj_removed |= inside
            world.obj_vel[inside] = 0.0
            events.entered += int(inside.sum())

    new_dist = world._lookup_distances()
    events.dist_deltas = new_dist - world.obj_dist
    world.obj_dist = new_dist

    world.sim_time += dt
    if not (np.all(np.isfinite(world.obj_pos)) and np.all(np.isfinite(world.obj_vel))
            and np.all(np.isfinite(world.p_pos)) and np.all(np.isfinite(world.p_vel))):
        raise PhysicsFault("non-finite body state")
    return events


def _resolve_object_pairs(world: WorldState) -> None:
    p = world.params
    idx = np.nonzero(~world.obj_removed)[0]
    if len(idx) < 2:
        return
    pos = world.obj_pos[idx]
    diff = pos[:, None, :] - pos[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    contact = (2 * p.object_radius) ** 2
    ii, jj = np.nonzero(np.triu(d2 < contact, k=1))
    e = p.object_pair_restitution
    for a, b in zip(ii, jj):
        i, j = idx[a], idx[b]
        delta = world.obj_pos[j] - world.obj_pos[i]
        d = math.hypot(delta[0], delta[1])
        n = delta / d if d > 1e-12 else np.array([1.0, 0.0])
        overlap = 2 * p.object_radius - d
        world.obj_pos[i] -= 0.5 * overlap * n
        world.obj_pos[j] += 0.5 * overlap * n
        ui = float(world.obj_vel[i] @ n)
        uj = float(world.obj_vel[j] @ n)
        if ui - uj > 0.0:  # approaching
            uc = 0.5 * (ui + uj)
            world.obj_vel[i] += (uc - 0.5 * e * (ui - uj) - ui) * n
            world.obj_vel[j] += (uc - 0.5 * e * (uj - ui) - uj) * n


def _resolve_robot_push(world: WorldState, robot_vel: tuple[float, float]) -> None:
    p = world.params
    active = ~world.obj_removed
    if not active.any():
        return
    rx, ry = world.robot.x, world.robot.y
    dx = world.obj_pos[:, 0] - rx
    dy = world.obj_pos[:, 1] - ry
    d2 = dx * dx + dy * dy
    contact = p.robot_radius + p.object_radius
    hit = active & (d2 < contact * contact)
    for i in np.nonzero(hit)[0]:
        d = math.sqrt(d2[i])
        if d > 1e-12:
            n = np.array([dx[i] / d, dy[i] / d])
        else:
            n = np.array([math.cos(world.robot.theta), math.sin(world.robot.theta)])
        world.obj_pos[i] = np.array([rx, ry]) + n * contact
        un = float(world.obj_vel[i] @ n)
        ur = robot_vel[0] * n[0] + robot_vel[1] * n[1]
        if un < ur:
            world.obj_vel[i] += (ur - un) * n


def _robot_collides(world: WorldState, x: float, y: float) -> bool:
    r = world.params.robot_radius
    return any(w.distance(x, y) < r for w in world.env.walls)


def settle(world: WorldState, events: StepEvents, max_time: float = 5.0) -> None:
    """Run physics until in-flight particles are gone and objects have stopped.

    Called at the end of every primitive so each decision step is
    self-contained: rewards land on the action that caused them.
    """
    cap = int(max_time / world.params.dt)
    for _ in range(cap):
        active = ~world.obj_removed
        if len(world.p_pos) == 0 and not np.any(world.obj_vel[active]):
            break
        events.merge(step_physics(world))


def _turn_substeps(world: WorldState, bearing: float, blower_on: bool,
                   events: StepEvents) -> None:
    p = world.params
    max_step = p.robot_turn_rate * p.dt
    while True:
        err = wrap_angle(bearing - world.robot.theta)
        if abs(err) <= 1e-12:
            break
        world.robot.theta = wrap_angle(world.robot.theta + max(-max_step, min(max_step, err)))
        if blower_on:
            emit_blow(world)
        events.merge(step_physics(world))


def execute_primitive(world: WorldState, prim: Primitive) -> StepEvents:
    """Run one movement primitive to completion, accumulating events.

    MoveTo follows the cell-center polyline at constant speed, turning in place
    at direction changes; it aborts at the first wall contact with the
    collision flag set. TurnInPlace rotates to face the target bearing exactly.
    The blower, when on, emits every substep of the primitive.
    """
    p = world.params
    events = StepEvents.zero(world.num_objects)

    if isinstance(prim, TurnInPlace):
        tx, ty = prim.target
        dx, dy = tx - world.robot.x, ty - world.robot.y
        if math.hypot(dx, dy) < 1e-9:
            return events
        _turn_substeps(world, math.atan2(dy, dx), prim.blower_on, events)
        settle(world, events)
        return events

    if not isinstance(prim, MoveTo):
        raise TypeError(f"unknown primitive {prim!r}")
    if len(prim.path) <= 1:
        return events

    # Collapse collinear runs so long straights are single segments.
    waypoints = []
    prev_step = None
    cells = list(prim.path)
    for a, b in zip(cells[:-1], cells[1:]):
        step = (b[0] - a[0], b[1] - a[1])
        if step == (0, 0):
            continue
        if step == prev_step and waypoints:
            waypoints[-1] = b
        else:
            waypoints.append(b)
        prev_step = step

    aborted = False
    for wp in waypoints:
        wx, wy = cell_center(wp)
        dx, dy = wx - world.robot.x, wy - world.robot.y
        seg = math.hypot(dx, dy)
        if seg < 1e-9:
            continue
        bearing = math.atan2(dy, dx)
        _turn_substeps(world, bearing, prim.blower_on, events)
        ux, uy = math.cos(bearing), math.sin(bearing)
        remaining = seg
        while remaining > 1e-12:
            step = min(p.robot_speed * p.dt, remaining)
            cx = world.robot.x + ux * step
            cy = world.robot.y + uy * step
            if _robot_collides(world, cx, cy):
                events.collision = True
                aborted = True
                break
            world.robot.x, world.robot.y = cx, cy
            remaining -= step
            if prim.blower_on:
                emit_blow(world)
            events.merge(step_physics(world, robot_vel=(ux * p.robot_speed, uy * p.robot_speed)))
        if aborted:
            break
    settle(world, events)
    return events


@dataclass(frozen=True)
class RewardConfig:
    success_reward: float = 1.0
    partial_coeff: float = 1.0  # reward per meter of shortest-path progress
    collision_penalty: float = 0.25
    collision_enabled: bool = True


def compute_reward(events: StepEvents, cfg: RewardConfig = RewardConfig()) -> float:
    """Success + distance-progress - collision terms for one decision step."""
    r = cfg.success_reward * events.entered
    r += cfg.partial_coeff * float(-np.sum(events.dist_deltas))
    if cfg.collision_enabled and events.collision:
        r -= cfg.collision_penalty
    return r
