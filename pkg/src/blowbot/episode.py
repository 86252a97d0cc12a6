"""Episode lifecycle: the closed agent loop and per-episode bookkeeping.

An episode ends when every object has been removed or after 100 consecutive
decision steps (at the finest executed frequency) without a success.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .actions import Action, RobotVariant, to_primitive
from .envs import EnvSpec, point_to_cell
from .errors import ConfigError
from .mapping import (GlobalMaps, SensorParams, distance_field, egocentric_state, fuse,
                      receptacle_source_cells, sense)
from .world import (Primitive, RewardConfig, SimParams, WorldState, compute_reward,
                    execute_primitive, reset)

DEFAULT_TIMEOUT = 100


@dataclass
class EpisodeState:
    objects_collected: int = 0
    steps_since_success: int = 0
    total_steps: int = 0
    rewards: list[float] = field(default_factory=list)
    done: bool = False


def step_episode(world: WorldState, primitive: Primitive, ep: EpisodeState,
                 reward_cfg: RewardConfig, timeout: int = DEFAULT_TIMEOUT) -> tuple[float, bool]:
    """Execute one primitive, score it, and update termination counters."""
    if ep.done:
        raise ConfigError("stepping a finished episode")
    events = execute_primitive(world, primitive)
    r = compute_reward(events, reward_cfg)
    ep.total_steps += 1
    ep.objects_collected += events.entered
    if events.entered > 0:
        ep.steps_since_success = 0
    else:
        ep.steps_since_success += 1
    ep.rewards.append(r)
    ep.done = world.active_count() == 0 or ep.steps_since_success >= timeout
    return r, ep.done


class AgentLoop:
    """One agent's partial-observability loop around a seeded world.

    Owns the world, the fused maps, and the per-episode counters; produces
    state tensors and executes decoded actions. Distance fields are cached and
    refreshed only when the occupancy map or the robot cell changes.
    """

    def __init__(self, spec: EnvSpec, variant: RobotVariant, crop: int, seed: int,
                 sim_params: SimParams = SimParams(), reward_cfg: RewardConfig | None = None,
                 sensor: SensorParams = SensorParams(), timeout: int = DEFAULT_TIMEOUT):
        if reward_cfg is None:
            reward_cfg = RewardConfig(collision_enabled=variant is not RobotVariant.PUSHING)
        sim_params = replace(sim_params, nozzle_offset=variant.nozzle_offset)
        if variant is RobotVariant.PUSHING:
            sim_params = replace(sim_params, blow_force=0.0)
        self.spec = spec
        self.variant = variant
        self.crop = crop
        self.sensor = sensor
        self.reward_cfg = reward_cfg
        self.timeout = timeout
        self.world = reset(spec, seed, sim_params)
        self.maps = GlobalMaps.blank(spec.grid_shape())
        self.receptacle_cells = receptacle_source_cells(spec)
        self.episode = EpisodeState()
        self._dist_rec = None
        self._rev_rec = -1
        self._dist_agent = None
        self._agent_key = None
        self._tensor: np.ndarray | None = None
        self.trail: list[tuple[float, float]] = [(self.world.robot.x, self.world.robot.y)]
        self._observe()

    @property
    def qmap_shape(self) -> tuple[int, int, int]:
        return (self.variant.num_channels, self.crop, self.crop)

    @property
    def done(self) -> bool:
        return self.episode.done

    def _observe(self) -> None:
        obs = sense(self.world, self.sensor)
        self.maps = fuse(self.maps, obs)
        self._tensor = None

    def _fields(self) -> tuple[np.ndarray, np.ndarray]:
        if self._rev_rec != self.maps.occupancy_rev:
            self._dist_rec = distance_field(self.maps.occupancy, self.receptacle_cells, "free")
            self._rev_rec = self.maps.occupancy_rev
        cell = point_to_cell(self.world.robot.x, self.world.robot.y)
        key = (cell, self.maps.occupancy_rev)
        if self._agent_key != key:
            self._dist_agent = distance_field(self.maps.occupancy, [cell], "occupied")
            self._agent_key = key
        return self._dist_rec, self._dist_agent

    def state_tensor(self) -> np.ndarray:
        if self._tensor is None:
            dist_rec, dist_agent = self._fields()
            self._tensor = egocentric_state(
                self.maps, self.world.robot, self.receptacle_cells, self.crop,
                self.spec.diagonal, self.world.params.robot_radius,
                dist_to_receptacle=dist_rec, dist_from_agent=dist_agent)
        return self._tensor

    def step(self, action: Action) -> tuple[float, bool, dict]:
        """Decode, execute, score, and re-observe. Returns (reward, done, info)."""
        primitive, located = to_primitive(action, self.world.robot, self.maps.occupancy,
                                          self.variant, self.spec, self.crop)
        before = self.episode.objects_collected
        r, done = step_episode(self.world, primitive, self.episode, self.reward_cfg,
                               self.timeout)
        self.trail.append((self.world.robot.x, self.world.robot.y))
        self._observe()
        info = {
            "channel": located.channel,
            "world_target": located.world_target,
            "entered": self.episode.objects_collected - before,
            "objects_collected": self.episode.objects_collected,
            "substeps": self.world.sim_time,
        }
        return r, done, info
