"""Experiment orchestration: train, evaluate, specialization stats, sweeps, dumps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .actions import Action, RobotVariant, decode
from .config import RunConfig, load_config_file, serialize_config
from .dqn import select_action_lazy
from .envs import build_env
from .episode import AgentLoop
from .errors import ConfigError
from .mapping import distance_field
from .multifreq import (MultiFrequencyTrainer, RewardMode, TrainSettings, cycle_pattern,
                        episode_seed)
from .network import QNetwork, forward_qmaps, load_checkpoint, save_checkpoint
from .world import RewardConfig, SimParams


def make_loop_factory(cfg: RunConfig):
    """Factory of per-episode AgentLoops for one run configuration."""
    spec = build_env(cfg.env, num_objects=cfg.resolved_num_objects())
    variant = RobotVariant(cfg.variant)
    sim = SimParams(blow_force=cfg.blow_force)
    reward = RewardConfig(partial_coeff=cfg.partial_reward,
                          collision_enabled=cfg.collision_penalty)

    def factory(seed: int) -> AgentLoop:
        return AgentLoop(spec, variant, cfg.crop, seed, sim, reward,
                         timeout=cfg.episode_timeout)

    return factory


def train_settings(cfg: RunConfig) -> TrainSettings:
    return TrainSettings(
        n_levels=cfg.levels, k=cfg.k, total_iterations=cfg.iterations,
        batch_size=cfg.batch_size, buffer_capacity=cfg.buffer_capacity,
        gamma=cfg.gamma, lr=cfg.lr, momentum=cfg.momentum,
        grad_clip_norm=cfg.grad_clip_norm, target_sync_every=cfg.target_sync_every,
        train_frequency=cfg.train_frequency,
        reward_mode=RewardMode(cfg.reward_accumulation))


def checkpoint_path(run_dir: Path, level: int) -> Path:
    return Path(run_dir) / f"checkpoint_level{level}.bbq"


def train(cfg: RunConfig, debug_maps: bool = False) -> Path:
    """Train one policy; writes config snapshot, checkpoints, and CSV logs."""
    run_dir = Path(cfg.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(serialize_config(cfg))

    trainer = MultiFrequencyTrainer(make_loop_factory(cfg), train_settings(cfg), cfg.seed)
    trainer.run()

    for j, lvl in enumerate(trainer.rt.levels):
        save_checkpoint(checkpoint_path(run_dir, j),
                        lvl.online, meta={"level": j, "crop": cfg.crop,
                                          "variant": cfg.variant, "seed": cfg.seed})

    with open(run_dir / "train_log.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "level", "loss", "epsilon", "env_steps"])
        for row in trainer.log:
            loss = "" if row.loss is None else f"{row.loss:.6f}"
            w.writerow([row.iteration, row.level, loss, f"{row.epsilon:.6f}", row.env_steps])
    with open(run_dir / "episodes.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["episode", "steps", "return", "objects"])
        for ep in trainer.episodes:
            w.writerow([ep.episode, ep.steps, f"{ep.ret:.6f}", ep.objects])

    if debug_maps:
        dump_loop_maps(trainer.loop, run_dir / "maps", prefix="final")
    return run_dir


def load_run(run_dir) -> tuple[RunConfig, list[QNetwork]]:
    """Config snapshot + per-level networks from a finished training run."""
    run_dir = Path(run_dir)
    snap = run_dir / "config.txt"
    if not snap.exists():
        raise ConfigError(f"{run_dir}: no config snapshot (not a run directory?)")
    from .config import resolve_config

    cfg = resolve_config(load_config_file(snap))
    nets = []
    for j in range(cfg.levels):
        path = checkpoint_path(run_dir, j)
        if not path.exists():
            raise ConfigError(f"{run_dir}: missing checkpoint for level {j}")
        net, meta = load_checkpoint(path)
        if net.num_actions != RobotVariant(cfg.variant).num_channels:
            raise ConfigError(
                f"{path}: checkpoint has {net.num_actions} action channels but the "
                f"{cfg.variant} variant needs {RobotVariant(cfg.variant).num_channels}")
        if meta.get("crop", cfg.crop) != cfg.crop:
            raise ConfigError(f"{path}: checkpoint crop {meta.get('crop')} != config crop "
                              f"{cfg.crop}")
        nets.append(net)
    return cfg, nets


@dataclass
class EvalResult:
    rows: list[tuple[int, int, int, int]]  # (seed, episode, step, objects)
    finals: list[int]  # objects at end of each episode
    action_counts: np.ndarray  # (levels, channels) chosen-action counts
    mean: float
    std: float


def evaluate(cfg: RunConfig, nets: list[QNetwork] | None, episodes: int | None = None,
             seed: int | None = None, out: Path | str | None = None,
             random_policy: bool = False, debug_maps: bool = False) -> EvalResult:
    """Greedy evaluation episodes (or the uniform-random baseline).

    Writes eval_curve.csv (`seed,episode,step,objects`) and summary.txt when
    `out` is given. Deterministic for a given (checkpoint, seed).
    """
    if not random_policy and (nets is None or len(nets) != cfg.levels):
        raise ConfigError("need one checkpoint per level for greedy evaluation")
    episodes = cfg.eval_episodes if episodes is None else episodes
    seed = cfg.seed if seed is None else seed
    factory = make_loop_factory(cfg)
    pattern = cycle_pattern(cfg.levels, cfg.k)
    rows = []
    finals = []
    channels = RobotVariant(cfg.variant).num_channels
    counts = np.zeros((cfg.levels, channels), dtype=np.int64)

    for ep in range(episodes):
        loop = factory(episode_seed(seed, ep))
        rng = np.random.default_rng([seed, 4, ep])
        pos = 0
        step = 0
        rows.append((seed, ep, 0, 0))
        while not loop.done and step < cfg.eval_max_steps:
            level = pattern[pos]
            state = loop.state_tensor()
            if random_policy:
                action = select_action_lazy(lambda: None, loop.qmap_shape, 1.0, rng)
            else:
                action = decode(forward_qmaps(nets[level], state))
            counts[level, action.channel] += 1
            _, done, info = loop.step(action)
            step += 1
            pos = (pos + 1) % len(pattern)
            rows.append((seed, ep, step, info["objects_collected"]))
            if debug_maps and ep == 0 and out is not None:
                dump_loop_maps(loop, Path(out) / "maps", prefix=f"step{step:04d}")
        finals.append(loop.episode.objects_collected)

    mean = float(np.mean(finals))
    std = float(np.std(finals))
    result = EvalResult(rows, finals, counts, mean, std)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "eval_curve.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["seed", "episode", "step", "objects"])
            w.writerows(rows)
        (out / "summary.txt").write_text(
            f"episodes = {episodes}\nmean = {mean:.4f}\nstd = {std:.4f}\n")
    return result


def specialization_stats(cfg: RunConfig, nets: list[QNetwork], episodes: int = 5,
                         seed: int | None = None) -> np.ndarray:
    """Per-level action-channel fractions over greedy episodes; rows sum to 1."""
    if cfg.levels < 2:
        raise ConfigError("specialization stats need a multi-level policy")
    result = evaluate(cfg, nets, episodes=episodes, seed=seed)
    totals = result.action_counts.sum(axis=1, keepdims=True)
    totals[totals == 0] = 1
    return result.action_counts / totals


def objects_at_step(result: EvalResult, budget: int) -> float:
    """Mean objects collected by `budget` decision steps, per episode."""
    per_ep: dict[int, int] = {}
    for _, ep, step, objects in result.rows:
        if step <= budget:
            per_ep[ep] = objects
    return float(np.mean(list(per_ep.values())))


def steps_to_fraction(result: EvalResult, fraction: float, total_objects: int,
                      censor: int) -> float:
    """Median steps to collect `fraction` of the objects (censored episodes count as `censor`)."""
    need = math.ceil(fraction * total_objects)
    reached: dict[int, int] = {}
    seen = set()
    for _, ep, step, objects in result.rows:
        seen.add(ep)
        if objects >= need and ep not in reached:
            reached[ep] = step
    vals = [reached.get(ep, censor) for ep in sorted(seen)]
    return float(np.median(vals))


def sweep(base_overrides: dict, axis: str, values: list, seeds: list[int],
          out: Path | str, preset: str | None = None) -> list[tuple]:
    """Train+evaluate over one config axis; returns and writes the summary table."""
    from .config import resolve_config

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for value in values:
        finals = []
        for s in seeds:
            overrides = dict(base_overrides)
            overrides[axis] = value
            run_out = out / f"{axis}_{value}_seed{s}"
            cfg = resolve_config(overrides, preset=preset, seed=s, out=str(run_out))
            run_dir = train(cfg)
            cfg2, nets = load_run(run_dir)
            res = evaluate(cfg2, nets, out=run_out / "eval")
            finals.append(res.mean)
        summary.append((value, float(np.mean(finals)), float(np.std(finals)), seeds))

    with open(out / "sweep_summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["axis_value", "mean", "std", "seeds"])
        for value, mean, std, ss in summary:
            w.writerow([value, f"{mean:.4f}", f"{std:.4f}", ";".join(str(x) for x in ss)])
    return summary


def write_pgm(path, grid: np.ndarray) -> None:
    """Binary PGM of a [0, 1] float or boolean grid, row 0 at the top."""
    g = np.asarray(grid, dtype=np.float64)
    g = np.clip(g, 0.0, 1.0)
    data = (g * 255).astype(np.uint8)[::-1]  # world y-up -> image y-down
    with open(path, "wb") as f:
        f.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        f.write(data.tobytes())


def dump_loop_maps(loop: AgentLoop, out_dir, prefix: str) -> None:
    """Debug PGM dumps of the agent's maps, distance fields, and trajectory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_pgm(out_dir / f"{prefix}_overhead.pgm", loop.maps.overhead / 4.0)
    write_pgm(out_dir / f"{prefix}_occupancy.pgm", loop.maps.occupancy / 2.0)
    rec, agent = loop._fields()
    diag = loop.spec.diagonal
    for name, fld in (("dist_receptacle", rec), ("dist_agent", agent)):
        norm = np.where(np.isfinite(fld), fld / diag, 1.0)
        write_pgm(out_dir / f"{prefix}_{name}.pgm", norm)
    if loop.trail:
        traj = np.zeros(loop.spec.grid_shape())
        from .envs import point_to_cell

        for x, y in loop.trail:
            iy, ix = point_to_cell(x, y)
            traj[iy, ix] = 1.0
        write_pgm(out_dir / f"{prefix}_trajectory.pgm", traj)
