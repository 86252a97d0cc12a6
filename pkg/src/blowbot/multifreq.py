"""Multi-frequency subpolicy execution with cross-level reward accumulation.

Level 0 is the highest level (lowest frequency); each step of level j enables
k steps of level j+1. Every level is a full DQN agent over the same state and
action space; levels never communicate except through accumulated rewards:
each reward is credited to the acting level and to every lower-frequency level
whose span is still open.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import torch

from .actions import Action
from .dqn import (EpsilonSchedule, ReplayBuffer, Transition, epsilon, select_action_lazy,
                  sync_target, td_targets_batch)
from .episode import AgentLoop
from .errors import SchedulingFault
from .network import OptimizerState, QNetwork, forward_qmaps, loss_and_grad, sgd_step


class RewardMode(str, Enum):
    ACCUMULATE = "accumulate"
    OWN_STEP = "own_step"


def cycle_pattern(n: int, k: int) -> list[int]:
    """One full highest-level cycle of acting-level indices.

    n=2, k=4 -> [0, 1, 1, 1, 1]; n=3, k=2 -> [0, 1, 2, 2, 1, 2, 2].
    """
    if n < 1 or k < 1:
        raise ValueError(f"need n >= 1 and k >= 1, got n={n}, k={k}")

    def expand(level: int) -> list[int]:
        if level == n - 1:
            return [level]
        return [level] + k * expand(level + 1)

    return expand(0)


def schedule_sequence(n: int, k: int, total_steps: int) -> list[int]:
    """The periodic acting-level sequence, truncated to total_steps."""
    pattern = cycle_pattern(n, k)
    reps = -(-total_steps // len(pattern))
    return (pattern * reps)[:total_steps]


def tick_period(n: int, k: int, train_frequency: int = 4) -> int:
    """Env steps per SGD tick: the flat train frequency for n=1, else one full cycle."""
    return train_frequency if n == 1 else len(cycle_pattern(n, k))


@dataclass
class PendingTransition:
    state: np.ndarray
    action: tuple[int, int, int]
    reward: float = 0.0


@dataclass
class LevelRuntime:
    online: QNetwork
    target: QNetwork
    buffer: ReplayBuffer
    opt: OptimizerState
    pending: PendingTransition | None = None
    steps: int = 0


@dataclass
class MultiLevelRuntime:
    levels: list[LevelRuntime]
    mode: RewardMode = RewardMode.ACCUMULATE
    last_acting: int | None = None


def record_step(rt: MultiLevelRuntime, acting_level: int, state: np.ndarray,
                action: Action) -> None:
    """Open a pending transition for the level that just chose an action."""
    lvl = rt.levels[acting_level]
    if lvl.pending is not None:
        raise SchedulingFault(f"level {acting_level} already has an open transition")
    lvl.pending = PendingTransition(state, (action.channel, *action.cell))
    lvl.steps += 1
    rt.last_acting = acting_level


def accumulate_reward(rt: MultiLevelRuntime, reward: float,
                      mode: RewardMode | None = None) -> None:
    """Credit one env step's reward after record_step.

    ACCUMULATE adds it to the acting level and every open lower-frequency
    pending (undiscounted within the span); OWN_STEP credits only the actor.
    """
    if rt.last_acting is None:
        raise SchedulingFault("accumulate_reward before any record_step")
    mode = mode or rt.mode
    if mode is RewardMode.ACCUMULATE:
        for lvl in rt.levels[: rt.last_acting + 1]:
            if lvl.pending is not None:
                lvl.pending.reward += reward
    else:
        pend = rt.levels[rt.last_acting].pending
        if pend is not None:
            pend.reward += reward


def commit_transition(rt: MultiLevelRuntime, level: int, next_state: np.ndarray,
                      done: bool) -> Transition:
    """Close a level's span when control returns to it (or the episode ends)."""
    lvl = rt.levels[level]
    if lvl.pending is None:
        raise SchedulingFault(f"level {level} has no open transition to commit")
    t = Transition(lvl.pending.state, lvl.pending.action, lvl.pending.reward,
                   next_state, done)
    lvl.buffer.push(t)
    lvl.pending = None
    return t


def flush_all(rt: MultiLevelRuntime, next_state: np.ndarray) -> list[Transition]:
    """Episode end: commit every open pending as terminal."""
    out = []
    for j, lvl in enumerate(rt.levels):
        if lvl.pending is not None:
            out.append(commit_transition(rt, j, next_state, True))
    return out


def episode_seed(master_seed: int, index: int) -> int:
    """Deterministic per-episode world seed derived from the master seed."""
    return int(np.random.SeedSequence([master_seed, 3, index]).generate_state(1, np.uint64)[0])


@dataclass
class TrainSettings:
    """Everything the training loop needs beyond the environment itself."""

    n_levels: int = 2
    k: int = 4
    total_iterations: int = 2000
    batch_size: int = 16
    buffer_capacity: int = 2000
    gamma: float = 0.75
    lr: float = 0.01
    momentum: float = 0.9
    grad_clip_norm: float = 100.0
    target_sync_every: int = 1000
    train_frequency: int = 4  # used when n_levels == 1
    prefill_fraction: float = 1.0 / 40.0
    anneal_fraction: float = 0.1
    reward_mode: RewardMode = RewardMode.ACCUMULATE


@dataclass
class LogRow:
    iteration: int
    level: int
    loss: float | None
    epsilon: float
    env_steps: int


@dataclass
class EpisodeRow:
    episode: int
    steps: int
    ret: float
    objects: int


class MultiFrequencyTrainer:
    """Interleaves the level schedule with environment steps and SGD ticks.

    One SGD iteration (one update per level) runs per completed highest-level
    cycle, after the random prefill. Fully deterministic for a given seed.
    """

    def __init__(self, loop_factory, settings: TrainSettings, seed: int):
        self.loop_factory = loop_factory
        self.s = settings
        self.seed = seed
        self.pattern = cycle_pattern(settings.n_levels, settings.k)
        self.period = tick_period(settings.n_levels, settings.k, settings.train_frequency)
        self.total_env_steps = settings.total_iterations * self.period
        self.prefill_steps = max(1, int(round(self.total_env_steps * settings.prefill_fraction)))
        self.eps_schedule = EpsilonSchedule(
            1.0, 0.01, max(1, int(round(settings.total_iterations * settings.anneal_fraction))))

        self.episode_index = 0
        self.loop: AgentLoop = loop_factory(episode_seed(seed, 0))
        torch.manual_seed(seed)
        ch, crop, _ = self.loop.qmap_shape
        levels = []
        for _ in range(settings.n_levels):
            online = QNetwork(4, ch)
            target = QNetwork(4, ch)
            target.load_state_dict(online.state_dict())
            opt = OptimizerState(settings.lr, settings.momentum, 0.0, settings.grad_clip_norm)
            levels.append(LevelRuntime(online, target, ReplayBuffer(settings.buffer_capacity), opt))
        self.rt = MultiLevelRuntime(levels, settings.reward_mode)

        self.action_rng = np.random.default_rng([seed, 1])
        self.train_rng = np.random.default_rng([seed, 2])
        self.pos = 0
        self.env_steps = 0
        self.iteration = 0
        self.episode_return = 0.0
        self.log: list[LogRow] = []
        self.episodes: list[EpisodeRow] = []
        self.action_trace: list[tuple[int, int, int, int]] = []  # (level, channel, row, col)

    def current_epsilon(self) -> float:
        if self.env_steps < self.prefill_steps:
            return 1.0
        return epsilon(self.iteration, self.eps_schedule)

    def step_once(self) -> None:
        level = self.pattern[self.pos]
        lvl = self.rt.levels[level]
        state = self.loop.state_tensor()
        eps = self.current_epsilon()
        action = select_action_lazy(lambda: forward_qmaps(lvl.online, state),
                                    self.loop.qmap_shape, eps, self.action_rng)
        record_step(self.rt, level, state, action)
        self.action_trace.append((level, action.channel, *action.cell))
        reward, done, _ = self.loop.step(action)
        accumulate_reward(self.rt, reward)
        self.env_steps += 1
        self.episode_return += reward
        after = self.loop.state_tensor()

        if done:
            flush_all(self.rt, after)
            self.episodes.append(EpisodeRow(self.episode_index, self.loop.episode.total_steps,
                                            self.episode_return, self.loop.episode.objects_collected))
            self.episode_index += 1
            self.episode_return = 0.0
            self.loop = self.loop_factory(episode_seed(self.seed, self.episode_index))
            self.pos = 0
        else:
            self.pos = (self.pos + 1) % len(self.pattern)
            nxt = self.pattern[self.pos]
            if self.rt.levels[nxt].pending is not None:
                commit_transition(self.rt, nxt, after, False)

        past_prefill = self.env_steps > self.prefill_steps
        if past_prefill and (self.env_steps - self.prefill_steps) % self.period == 0:
            self.train_tick()

    def train_tick(self) -> None:
        """One SGD iteration: every level updates from its own buffer, then syncs."""
        self.iteration += 1
        eps = epsilon(self.iteration, self.eps_schedule)
        for j, lvl in enumerate(self.rt.levels):
            batch = lvl.buffer.sample(self.s.batch_size, self.train_rng)
            loss = None
            if batch is not None:
                states, acts, targets = td_targets_batch(batch, lvl.online, lvl.target,
                                                         self.s.gamma)
                loss, grads = loss_and_grad(lvl.online, states, acts, targets)
                sgd_step(lvl.online, lvl.opt, grads)
            sync_target(lvl.online, lvl.target, self.iteration, self.s.target_sync_every)
            self.log.append(LogRow(self.iteration, j, loss, eps, self.env_steps))

    def run(self) -> None:
        while self.iteration < self.s.total_iterations:
            self.step_once()
