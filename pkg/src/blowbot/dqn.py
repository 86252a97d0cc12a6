"""Replay buffer, double-DQN targets, epsilon-greedy exploration, target sync."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .actions import Action, action_from_flat, decode
from .network import QNetwork, forward_qmaps


@dataclass
class Transition:
    state: np.ndarray  # (4, H, W) float32
    action: tuple[int, int, int]  # (channel, row, col)
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring; uniform sampling with replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def push(self, t: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(t)
        else:
            self._items[self._next] = t
        self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        # Oldest-first order, matching FIFO semantics.
        n = len(self._items)
        start = self._next % n if n == self.capacity else 0
        for i in range(n):
            yield self._items[(start + i) % n]

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition] | None:
        """n uniform draws with replacement, or None while the buffer is not ready."""
        if len(self._items) < n:
            return None
        idx = rng.integers(0, len(self._items), size=n)
        return [self._items[i] for i in idx]


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.01
    anneal_iterations: int = 2000  # total_iterations / 10 by default


def epsilon(iteration: int, schedule: EpsilonSchedule) -> float:
    """Linear from start to end over the anneal window, constant afterwards."""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    if schedule.anneal_iterations <= 0 or iteration >= schedule.anneal_iterations:
        return schedule.end
    frac = iteration / schedule.anneal_iterations
    return schedule.start + frac * (schedule.end - schedule.start)


def select_action(qmap: np.ndarray, eps: float, rng: np.random.Generator) -> Action:
    """Epsilon-greedy over the full (channels, H, W) action map."""
    return select_action_lazy(lambda: qmap, qmap.shape, eps, rng)


def select_action_lazy(qmap_fn, shape: tuple[int, int, int], eps: float,
                       rng: np.random.Generator) -> Action:
    """Like select_action, but only evaluates the Q-map when exploiting."""
    if eps > 0.0 and rng.random() < eps:
        flat = int(rng.integers(0, shape[0] * shape[1] * shape[2]))
        return action_from_flat(flat, shape)
    return decode(qmap_fn())


def td_target_values(rewards: np.ndarray, dones: np.ndarray, q_online_next: np.ndarray,
                     q_target_next: np.ndarray, gamma: float) -> np.ndarray:
    """Double-DQN targets from precomputed next-state Q-maps.

    The bootstrap action is the argmax of the ONLINE map; its value is read
    from the TARGET map. Terminal transitions take y = r.
    """
    b = q_online_next.shape[0]
    flat_online = q_online_next.reshape(b, -1)
    flat_target = q_target_next.reshape(b, -1)
    a_star = np.argmax(flat_online, axis=1)
    bootstrap = flat_target[np.arange(b), a_star]
    return rewards + gamma * np.where(dones, 0.0, bootstrap)


def td_target(reward: float, next_state: np.ndarray, done: bool, online: QNetwork,
              target: QNetwork, gamma: float) -> float:
    """Single-transition double-DQN target."""
    if done:
        return float(reward)
    qo = forward_qmaps(online, next_state)
    qt = forward_qmaps(target, next_state)
    y = td_target_values(np.array([reward]), np.array([False]), qo[None], qt[None], gamma)
    return float(y[0])


def td_targets_batch(batch: list[Transition], online: QNetwork, target: QNetwork,
                     gamma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(states, actions, targets) arrays for one sampled batch."""
    states = np.stack([t.state for t in batch])
    next_states = np.stack([t.next_state for t in batch])
    rewards = np.array([t.reward for t in batch])
    dones = np.array([t.done for t in batch])
    actions = np.array([t.action for t in batch], dtype=np.int64)
    qo = forward_qmaps(online, next_states)
    qt = forward_qmaps(target, next_states)
    targets = td_target_values(rewards, dones, qo, qt, gamma)
    return states, actions, targets.astype(np.float32)


def sync_target(online: QNetwork, target: QNetwork, iteration: int,
                every: int = 1000) -> bool:
    """Hard-copy online params into the target net at every `every` iterations."""
    if every > 0 and iteration % every == 0:
        with torch.no_grad():
            target.load_state_dict(online.state_dict())
        return True
    return False


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.75
    batch_size: int = 32
    total_iterations: int = 20_000
    target_sync_every: int = 1000
    buffer_capacity: int = 10_000
    train_frequency: int = 4  # env steps per SGD iteration for single-frequency
    lr: float = 0.01
    momentum: float = 0.9
    grad_clip_norm: float = 100.0
    prefill_fraction: float = 1.0 / 40.0
    anneal_fraction: float = 0.1
