"""Shared test helpers: independent oracle implementations and world builders.

Oracles here deliberately avoid the package's own algorithms: the distance
oracle is a Bellman-Ford sweep with exact integer comparisons, line-of-sight
uses dense segment sampling, and the frame/physics checks are hand-derived.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from blowbot.envs import EnvSpec, RESOLUTION, Rect
from blowbot.mapping import KNOWN_FREE, OCCUPIED, UNKNOWN
from blowbot.world import Pose, SimParams, WorldState

SQRT2 = math.sqrt(2.0)


def exact_less(a1: int, d1: int, a2: int, d2: int) -> bool:
    """Is a1 + d1*sqrt(2) < a2 + d2*sqrt(2), using only integer arithmetic?"""
    a = a1 - a2  # compare a < d*sqrt(2) with d = d2 - d1
    d = d2 - d1
    if d == 0:
        return a < 0
    if d > 0:
        if a < 0:
            return True
        return a * a < 2 * d * d
    if a >= 0:
        return False
    return a * a > 2 * d * d


def oracle_distance_field(occupancy: np.ndarray, sources, treat_unknown_as: str,
                          resolution: float = RESOLUTION) -> np.ndarray:
    """Bellman-Ford relaxation over exact (axial, diagonal) step counts."""
    if treat_unknown_as == "occupied":
        blocked = occupancy != KNOWN_FREE
    else:
        blocked = occupancy == OCCUPIED
    ny, nx = occupancy.shape
    counts: list[list[tuple[int, int] | None]] = [[None] * nx for _ in range(ny)]
    for iy, ix in sources:
        if not blocked[iy, ix]:
            counts[iy][ix] = (0, 0)
    changed = True
    while changed:
        changed = False
        for iy in range(ny):
            for ix in range(nx):
                cur = counts[iy][ix]
                if cur is None:
                    continue
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        if dy == 0 and dx == 0:
                            continue
                        jy, jx = iy + dy, ix + dx
                        if not (0 <= jy < ny and 0 <= jx < nx) or blocked[jy, jx]:
                            continue
                        diag = dy != 0 and dx != 0
                        cand = (cur[0] + (0 if diag else 1), cur[1] + (1 if diag else 0))
                        old = counts[jy][jx]
                        if old is None or exact_less(cand[0], cand[1], old[0], old[1]):
                            counts[jy][jx] = cand
                            changed = True
    out = np.full((ny, nx), np.inf)
    for iy in range(ny):
        for ix in range(nx):
            c = counts[iy][ix]
            if c is not None:
                out[iy, ix] = c[0] * resolution + c[1] * (resolution * SQRT2)
    return out


def oracle_visible(world, cell: tuple[int, int], fov: float, rng_m: float,
                   step: float = RESOLUTION / 32) -> bool:
    """Per-cell line-of-sight brute force by dense segment sampling."""
    rx, ry, theta = world.robot.x, world.robot.y, world.robot.theta
    cy = (cell[0] + 0.5) * RESOLUTION
    cx = (cell[1] + 0.5) * RESOLUTION
    dx, dy = cx - rx, cy - ry
    dist = math.hypot(dx, dy)
    if dist <= world.params.robot_radius:
        return True
    if dist > rng_m:
        return False
    bearing = math.atan2(dy, dx)
    err = (bearing - theta + math.pi) % (2 * math.pi) - math.pi
    if abs(err) > fov / 2:
        return False
    walls = world.wall_grid
    n = max(2, int(dist / step))
    for j in range(n):
        t = (j + 0.5) / n
        px, py = rx + t * dx, ry + t * dy
        iy = min(max(int(py // RESOLUTION), 0), walls.shape[0] - 1)
        ix = min(max(int(px // RESOLUTION), 0), walls.shape[1] - 1)
        if (iy, ix) == cell:
            continue
        if walls[iy, ix]:
            return False
    return True


def make_world(spec: EnvSpec, pose: Pose, obj_positions, params: SimParams | None = None,
               seed: int = 0) -> WorldState:
    """Scripted world with exact body placement (bypasses rejection sampling)."""
    params = params or SimParams()
    w = WorldState(spec, params, pose, np.asarray(obj_positions, dtype=float).reshape(-1, 2),
                   np.random.default_rng(seed))
    return w


def rotate_spec_90(spec: EnvSpec) -> EnvSpec:
    """The same environment rotated +90 degrees: (x, y) -> (h - y, x)."""
    h = spec.height

    def rot(r: Rect) -> Rect:
        return Rect(h - r.y1, r.x0, h - r.y0, r.x1)

    return EnvSpec(spec.kind, spec.height, spec.width,
                   tuple(rot(w) for w in spec.walls), rot(spec.receptacle), spec.num_objects)


def rotate_point_90(x: float, y: float, h: float) -> tuple[float, float]:
    return (h - y, x)


@pytest.fixture
def small_spec():
    from blowbot.envs import build_env

    return build_env("SmallEmpty", num_objects=10)
