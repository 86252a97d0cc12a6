"""Spatial action maps: dense Q-values decoded into movement primitives.

Every pixel of the egocentric crop is a candidate target; the channel selects
the action type. Channel 0 is always move-without-blowing. Channel 1 (absent
for the pushing robot) is either turn-while-blowing or move-while-blowing,
depending on the robot variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .envs import EnvSpec, RESOLUTION, point_to_cell
from .errors import PhysicsFault
from .mapping import OCCUPIED, EgoFrame, ego_frame, plan_path
from .world import MoveTo, Pose, Primitive, TurnInPlace


class RobotVariant(str, Enum):
    BLOWING_TURN = "blowing_turn"
    BLOWING_MOVE = "blowing_move"
    SIDE_BLOWER = "side_blower"
    PUSHING = "pushing"

    @property
    def num_channels(self) -> int:
        return 1 if self is RobotVariant.PUSHING else 2

    @property
    def nozzle_offset(self) -> float:
        return -math.pi / 2 if self is RobotVariant.SIDE_BLOWER else 0.0


@dataclass(frozen=True)
class Action:
    channel: int
    cell: tuple[int, int]
    world_target: tuple[float, float] | None = None


def decode(qmap: np.ndarray) -> Action:
    """Global argmax over the (channels, H, W) map; ties go to the lowest flat index."""
    if np.isnan(qmap).any():
        raise PhysicsFault("NaN in action-value map")
    flat = int(np.argmax(qmap))
    ch, r, c = np.unravel_index(flat, qmap.shape)
    return Action(int(ch), (int(r), int(c)))


def action_from_flat(flat: int, shape: tuple[int, int, int]) -> Action:
    ch, r, c = np.unravel_index(int(flat), shape)
    return Action(int(ch), (int(r), int(c)))


def clamp_target(world_target: tuple[float, float], occupancy: np.ndarray,
                 spec: EnvSpec) -> tuple[float, float]:
    """Targets outside the environment snap to the nearest in-bounds free cell center."""
    ny, nx = occupancy.shape
    x, y = world_target
    iy, ix = point_to_cell(x, y)
    if 0 <= iy < ny and 0 <= ix < nx:
        return world_target
    candidates = occupancy != OCCUPIED
    if not candidates.any():
        candidates = np.ones_like(candidates)
    iys, ixs = np.nonzero(candidates)
    cx = (ixs + 0.5) * RESOLUTION
    cy = (iys + 0.5) * RESOLUTION
    best = int(np.argmin((cx - x) ** 2 + (cy - y) ** 2))
    return (float(cx[best]), float(cy[best]))


def to_primitive(action: Action, pose: Pose, occupancy: np.ndarray,
                 variant: RobotVariant, spec: EnvSpec, crop: int) -> tuple[Primitive, Action]:
    """Turn a decoded map action into a concrete primitive for this variant.

    Returns the primitive along with the action annotated with its world-frame
    target point.
    """
    if action.channel >= variant.num_channels:
        raise ValueError(f"channel {action.channel} invalid for {variant.value}")
    frame = ego_frame(pose, crop)
    target = frame.cell_to_world(action.cell)
    target = clamp_target(target, occupancy, spec)
    located = Action(action.channel, action.cell, target)

    blowing_move = action.channel == 1 and variant is RobotVariant.BLOWING_MOVE
    if action.channel == 0 or blowing_move:
        start = point_to_cell(pose.x, pose.y)
        goal = point_to_cell(*target)
        path = tuple(plan_path(occupancy, start, goal))
        return MoveTo(path, blower_on=blowing_move), located
    # Turn-while-blowing (forward or side nozzle).
    return TurnInPlace(target, blower_on=True), located
