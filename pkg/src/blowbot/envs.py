"""Environment geometry: the four named layouts, wall rectangles, and grid rasterization.

All environments are axis-aligned boxes with a one-cell-thick wall ring, an
optional interior divider, and a square receptacle region. Dimensions are in
meters; the world grid has a fixed resolution of RESOLUTION meters per cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

RESOLUTION = 0.02  # meters per grid cell
WALL_THICKNESS = 0.02  # one cell

ENV_KINDS = ("SmallEmpty", "LargeEmpty", "LargeDoor", "LargeCenter")

# Default object counts per layout; the desk preset divides these by 5.
DEFAULT_OBJECT_COUNT = {
    "SmallEmpty": 50,
    "LargeEmpty": 100,
    "LargeDoor": 100,
    "LargeCenter": 100,
}

RECEPTACLE_SIZE = 0.15
DOOR_GAP = 0.25


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle [x0, x1] x [y0, y1]."""

    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def distance(self, x: float, y: float) -> float:
        """Distance from a point to this rectangle (0 inside)."""
        dx = max(self.x0 - x, 0.0, x - self.x1)
        dy = max(self.y0 - y, 0.0, y - self.y1)
        return math.hypot(dx, dy)


@dataclass(frozen=True)
class EnvSpec:
    kind: str
    width: float
    height: float
    walls: tuple[Rect, ...]  # includes the boundary ring
    receptacle: Rect
    num_objects: int

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def grid_shape(self) -> tuple[int, int]:
        return (int(round(self.height / RESOLUTION)), int(round(self.width / RESOLUTION)))


def _boundary_walls(w: float, h: float, t: float) -> list[Rect]:
    return [
        Rect(0.0, 0.0, w, t),
        Rect(0.0, h - t, w, h),
        Rect(0.0, 0.0, t, h),
        Rect(w - t, 0.0, w, h),
    ]


def build_env(kind: str, num_objects: int | None = None) -> EnvSpec:
    """Fixed geometry for one of the four named layouts.

    `num_objects` overrides the default count (used by the desk-scale preset).
    """
    t = WALL_THICKNESS
    if kind == "SmallEmpty":
        w, h = 1.0, 0.5
        walls = _boundary_walls(w, h, t)
        receptacle = Rect(t, t, t + RECEPTACLE_SIZE, t + RECEPTACLE_SIZE)
    elif kind == "LargeEmpty":
        w, h = 1.0, 1.0
        walls = _boundary_walls(w, h, t)
        receptacle = Rect(t, t, t + RECEPTACLE_SIZE, t + RECEPTACLE_SIZE)
    elif kind == "LargeDoor":
        w, h = 1.0, 1.0
        walls = _boundary_walls(w, h, t)
        # Horizontal divider just below mid-height with a centered door gap.
        y0, y1 = h / 2 - t, h / 2
        gx0, gx1 = w / 2 - DOOR_GAP / 2, w / 2 + DOOR_GAP / 2
        walls.append(Rect(0.0, y0, gx0, y1))
        walls.append(Rect(gx1, y0, w, y1))
        receptacle = Rect(t, t, t + RECEPTACLE_SIZE, t + RECEPTACLE_SIZE)
    elif kind == "LargeCenter":
        w, h = 1.0, 1.0
        walls = _boundary_walls(w, h, t)
        half = RECEPTACLE_SIZE / 2
        receptacle = Rect(w / 2 - half, h / 2 - half, w / 2 + half, h / 2 + half)
    else:
        raise ConfigError(f"unknown environment kind {kind!r}; expected one of {ENV_KINDS}")

    count = DEFAULT_OBJECT_COUNT[kind] if num_objects is None else int(num_objects)
    if count < 1:
        raise ConfigError(f"num_objects must be positive, got {count}")
    return EnvSpec(kind, w, h, tuple(walls), receptacle, count)


def with_object_count(spec: EnvSpec, num_objects: int) -> EnvSpec:
    return replace(spec, num_objects=num_objects)


def point_to_cell(x: float, y: float) -> tuple[int, int]:
    """World point to (row, col); row indexes y, col indexes x."""
    return (int(math.floor(y / RESOLUTION)), int(math.floor(x / RESOLUTION)))


def cell_center(cell: tuple[int, int]) -> tuple[float, float]:
    iy, ix = cell
    return ((ix + 0.5) * RESOLUTION, (iy + 0.5) * RESOLUTION)


def cell_centers_grid(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """(xs, ys) arrays of cell-center coordinates, each of shape (ny, nx)."""
    ny, nx = shape
    xs = (np.arange(nx) + 0.5) * RESOLUTION
    ys = (np.arange(ny) + 0.5) * RESOLUTION
    return np.broadcast_to(xs[None, :], (ny, nx)), np.broadcast_to(ys[:, None], (ny, nx))


def rasterize_walls(spec: EnvSpec) -> np.ndarray:
    """Boolean (ny, nx) grid: True where the cell center lies inside a wall."""
    xs, ys = cell_centers_grid(spec.grid_shape())
    grid = np.zeros(spec.grid_shape(), dtype=bool)
    for wall in spec.walls:
        grid |= (xs >= wall.x0) & (xs <= wall.x1) & (ys >= wall.y0) & (ys <= wall.y1)
    return grid


def receptacle_mask(spec: EnvSpec) -> np.ndarray:
    """Boolean (ny, nx) grid of cells whose center lies in the receptacle."""
    xs, ys = cell_centers_grid(spec.grid_shape())
    r = spec.receptacle
    return (xs >= r.x0) & (xs <= r.x1) & (ys >= r.y0) & (ys <= r.y1)
