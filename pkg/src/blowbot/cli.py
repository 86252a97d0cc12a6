"""Command-line entry point: train / eval / sweep / stats."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config_file, resolve_config
from .errors import ConfigError


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--preset", choices=("desk", "paper"), help="scale preset")
    p.add_argument("--debug-maps", action="store_true", help="dump PGM map snapshots")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blowbot",
                                     description="Blowing-robot simulator and trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate a trained run directory")
    _add_common(p)
    p.add_argument("--run", required=True, help="training run directory")
    p.add_argument("--episodes", type=int, help="number of evaluation episodes")
    p.add_argument("--random-policy", action="store_true",
                   help="evaluate the uniform-random baseline instead of the checkpoints")

    p = sub.add_parser("stats", help="per-level action-type fractions of a trained run")
    _add_common(p)
    p.add_argument("--run", required=True, help="training run directory")
    p.add_argument("--episodes", type=int, default=5)

    p = sub.add_parser("sweep", help="train+eval across one config axis")
    _add_common(p)
    p.add_argument("--axis", required=True, help="config field to sweep")
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")

    return parser


def _overrides(args) -> dict:
    return load_config_file(args.config) if args.config else {}


def cmd_train(args) -> int:
    from .harness import train

    cfg = resolve_config(_overrides(args), preset=args.preset, seed=args.seed, out=args.out)
    run_dir = train(cfg, debug_maps=args.debug_maps)
    print(f"run complete: {run_dir}")
    return 0


def cmd_eval(args) -> int:
    from .harness import evaluate, load_run

    cfg, nets = load_run(args.run)
    if args.random_policy:
        nets = None
    out = Path(args.out) if args.out else Path(args.run) / "eval"
    result = evaluate(cfg, nets, episodes=args.episodes, seed=args.seed, out=out,
                      random_policy=args.random_policy, debug_maps=args.debug_maps)
    print(f"objects per episode: mean {result.mean:.2f} +/- {result.std:.2f} "
          f"({len(result.finals)} episodes)")
    return 0


def cmd_stats(args) -> int:
    from .harness import load_run, specialization_stats

    cfg, nets = load_run(args.run)
    fractions = specialization_stats(cfg, nets, episodes=args.episodes, seed=args.seed)
    names = ["move-without-blowing", "channel-1"]
    if cfg.variant in ("blowing_turn", "side_blower"):
        names[1] = "turn-while-blowing"
    elif cfg.variant == "blowing_move":
        names[1] = "move-while-blowing"
    for level, row in enumerate(fractions):
        parts = ", ".join(f"{names[c]} {row[c] * 100:.1f}%" for c in range(len(row)))
        print(f"level {level}: {parts}")
    return 0


def cmd_sweep(args) -> int:
    from .config import _coerce
    from .harness import sweep

    overrides = _overrides(args)
    values = [_coerce(args.axis, v) for v in args.values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    out = args.out or "runs/sweep"
    rows = sweep(overrides, args.axis, values, seeds, out, preset=args.preset)
    for value, mean, std, _ in rows:
        print(f"{args.axis}={value}: {mean:.2f} +/- {std:.2f}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"train": cmd_train, "eval": cmd_eval, "stats": cmd_stats, "sweep": cmd_sweep}
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
