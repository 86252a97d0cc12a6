"""Run configuration: presets, the flat key=value config format, validation."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .actions import RobotVariant
from .envs import DEFAULT_OBJECT_COUNT, ENV_KINDS
from .errors import ConfigError

PRESETS = ("desk", "paper")

# Scale-dependent defaults; everything else is preset-independent.
PRESET_VALUES = {
    "desk": dict(iterations=2000, buffer_capacity=2000, batch_size=16, crop=48,
                 target_sync_every=250, eval_episodes=20),
    "paper": dict(iterations=20_000, buffer_capacity=10_000, batch_size=32, crop=96,
                  target_sync_every=1000, eval_episodes=20),
}

# The pushing baseline trains 3x longer than blowing in comparison runs.
PUSHING_ITER_MULT = 3


@dataclass(frozen=True)
class RunConfig:
    env: str = "SmallEmpty"
    variant: str = "blowing_turn"
    levels: int = 2
    k: int = 4
    blow_force: float = 0.35
    reward_accumulation: str = "accumulate"  # accumulate | own_step
    collision_penalty: bool = True
    preset: str = "desk"
    seed: int = 0
    out: str = "runs/run"
    num_objects: int = 0  # 0 = preset default (desk: env default / 5)
    crop: int = 48
    iterations: int = 2000
    buffer_capacity: int = 2000
    batch_size: int = 16
    target_sync_every: int = 250
    gamma: float = 0.75
    lr: float = 0.01
    momentum: float = 0.9
    grad_clip_norm: float = 100.0
    train_frequency: int = 4
    partial_reward: float = 1.0
    episode_timeout: int = 100
    eval_episodes: int = 20
    eval_max_steps: int = 300

    def resolved_num_objects(self) -> int:
        if self.num_objects > 0:
            return self.num_objects
        base = DEFAULT_OBJECT_COUNT[self.env]
        return max(1, base // 5) if self.preset == "desk" else base


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    ftype = _FIELD_TYPES[key]
    raw = raw.strip()
    if ftype == "bool":
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if ftype == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if ftype == "float":
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict:
    """Parse the flat `key = value` format; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        out[key] = _coerce(key, raw)
    return out


def load_config_file(path) -> dict:
    return parse_config_text(Path(path).read_text())


def resolve_config(overrides: dict | None = None, preset: str | None = None,
                   seed: int | None = None, out: str | None = None) -> RunConfig:
    """Build a validated RunConfig: preset defaults, then explicit overrides.

    The pushing variant forces the collision penalty off and, unless
    `iterations` is set explicitly, trains 3x longer than the preset default.
    """
    overrides = dict(overrides or {})
    if preset is not None:
        overrides["preset"] = preset
    if seed is not None:
        overrides["seed"] = seed
    if out is not None:
        overrides["out"] = out

    preset_name = overrides.get("preset", RunConfig.preset)
    if preset_name not in PRESETS:
        raise ConfigError(f"preset must be one of {PRESETS}, got {preset_name!r}")
    cfg = replace(RunConfig(), preset=preset_name, **PRESET_VALUES[preset_name])

    unknown = set(overrides) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    explicit = set(overrides)
    cfg = replace(cfg, **overrides)

    if cfg.variant == "pushing":
        if cfg.collision_penalty and "collision_penalty" in explicit:
            raise ConfigError("the pushing baseline runs without the collision penalty")
        mult = PUSHING_ITER_MULT if "iterations" not in explicit else 1
        cfg = replace(cfg, collision_penalty=False, iterations=cfg.iterations * mult)

    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if cfg.env not in ENV_KINDS:
        raise ConfigError(f"env must be one of {ENV_KINDS}, got {cfg.env!r}")
    try:
        RobotVariant(cfg.variant)
    except ValueError:
        raise ConfigError(
            f"variant must be one of {[v.value for v in RobotVariant]}, got {cfg.variant!r}"
        ) from None
    if cfg.levels not in (1, 2, 3):
        raise ConfigError(f"levels must be 1, 2, or 3, got {cfg.levels}")
    if cfg.k < 1:
        raise ConfigError(f"k must be >= 1, got {cfg.k}")
    if cfg.reward_accumulation not in ("accumulate", "own_step"):
        raise ConfigError(f"reward_accumulation must be 'accumulate' or 'own_step', "
                          f"got {cfg.reward_accumulation!r}")
    if cfg.crop % 4 or cfg.crop < 8:
        raise ConfigError(f"crop must be a multiple of 4 and >= 8, got {cfg.crop}")
    if cfg.blow_force < 0:
        raise ConfigError(f"blow_force must be >= 0, got {cfg.blow_force}")
    if cfg.variant == "pushing" and cfg.collision_penalty:
        raise ConfigError("the pushing baseline runs without the collision penalty")
    for key in ("iterations", "buffer_capacity", "batch_size", "episode_timeout",
                "eval_episodes", "eval_max_steps", "target_sync_every", "train_frequency"):
        if getattr(cfg, key) < 1:
            raise ConfigError(f"{key} must be positive")
    if not 0 < cfg.gamma <= 1:
        raise ConfigError(f"gamma must be in (0, 1], got {cfg.gamma}")


def serialize_config(cfg: RunConfig) -> str:
    """Full snapshot in the flat format; re-parsing re-launches this run exactly."""
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
