"""blowbot: a 2D blowing-robot simulator with multi-frequency spatial-action-map DQN."""

from .actions import Action, RobotVariant, decode, to_primitive
from .config import RunConfig, resolve_config
from .envs import EnvSpec, build_env
from .episode import AgentLoop, EpisodeState, step_episode
from .mapping import GlobalMaps, distance_field, egocentric_state, fuse, plan_path, sense
from .multifreq import RewardMode, cycle_pattern, schedule_sequence
from .network import QNetwork, grad_check, load_checkpoint, save_checkpoint
from .world import (MoveTo, Pose, RewardConfig, SimParams, TurnInPlace, WorldState,
                    compute_reward, emit_blow, execute_primitive, reset, step_physics)

__version__ = "0.1.0"
