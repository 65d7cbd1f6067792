"""``misc-rl`` command line: train, eval, estimate-mi, discover.

Exit codes: 0 success, 2 usage or configuration error, 3 training diverged.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, atomic_write_text
from .envs import ENV_NAMES, make_env

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3


class UsageError(Exception):
    """Bad input; reported on stderr with exit code 2."""


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(RunConfig):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        kind = {bool: _bool, int: int, float: float, str: str, list: _int_list}[type(default)]
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, type=kind, default=None, metavar=type(default).__name__.upper())


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    env_seed = os.environ.get("MISC_SEED")
    if env_seed is not None:
        try:
            cfg = cfg.replace(seed=int(env_seed))
        except ValueError:
            raise ConfigError(f"MISC_SEED must be an integer, got {env_seed!r}") from None
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(RunConfig) if getattr(args, f.name) is not None}
    cfg = cfg.replace(**overrides)
    return cfg.validate()


def _seed(flag) -> int:
    """Explicit ``--seed``, else ``MISC_SEED``, else 0."""
    if flag is not None:
        return flag
    env_seed = os.environ.get("MISC_SEED")
    try:
        return int(env_seed) if env_seed is not None else 0
    except ValueError:
        raise ConfigError(f"MISC_SEED must be an integer, got {env_seed!r}") from None


# -- train ------------------------------------------------------------------------


def cmd_train(args) -> int:
    from .training import MetricsLog, TrainingDiverged, run_training

    cfg = _run_config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.toml")
    env = make_env(cfg.env)
    rows = [MetricsLog.header()]
    atomic_write_text(out / "metrics.csv", rows[0] + "\n")

    def on_epoch(m, ckpt):
        rows.append(m.row())
        # the whole file is replaced atomically, so readers never see a torn row
        atomic_write_text(out / "metrics.csv", "\n".join(rows) + "\n")
        write_checkpoint(out / "checkpoint.json", ckpt)
        if not args.quiet:
            print(
                f"epoch {m.epoch}: success={m.mean_task_success:.3f} displacement={m.mean_displacement:.4f} "
                f"intrinsic={m.mean_intrinsic_return:.3f} mi={m.mi_estimate:.4f}",
                flush=True,
            )

    try:
        res = run_training(env, cfg, on_epoch=on_epoch)
    except TrainingDiverged as exc:
        write_checkpoint(out / "checkpoint.json", exc.checkpoint)
        print(f"error: training diverged in epoch {exc.epoch}: {exc}; last good checkpoint written", file=sys.stderr)
        return EXIT_DIVERGED
    if cfg.epochs == 0:
        # the untrained networks, useful as an evaluation baseline
        write_checkpoint(out / "checkpoint.json", res.checkpoint)
    return EXIT_OK


def write_checkpoint(path, ckpt: dict) -> None:
    # json emits floats with repr, the shortest exact decimal for a 64-bit value
    atomic_write_text(path, json.dumps(ckpt, separators=(",", ":"), sort_keys=True) + "\n")


def read_checkpoint(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            ckpt = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(ckpt, dict) or ckpt.get("format_version") != 1 or "networks" not in ckpt:
        raise UsageError(f"{path}: not a format_version 1 checkpoint")
    return ckpt


# -- eval ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    from .agents import VariantConfig
    from .ndmath import make_rng
    from .training import actor_from_checkpoint, evaluate_policy

    if args.episodes < 1:
        raise UsageError("--episodes must be at least 1")
    ckpt = read_checkpoint(args.checkpoint)
    env = make_env(args.env or ckpt.get("env", ""))
    try:
        actor = actor_from_checkpoint(ckpt)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"checkpoint has no usable actor: {exc}") from None
    if actor.obs_dim != env.obs_dim or actor.act_dim != env.action_dim:
        raise UsageError(
            f"checkpoint expects obs_dim={actor.obs_dim}, action_dim={actor.act_dim}; "
            f"env {env.name} has obs_dim={env.obs_dim}, action_dim={env.action_dim}"
        )
    actor.max_action = env.max_action
    seed = _seed(args.seed)
    success, disp = evaluate_policy(env, actor, VariantConfig(), args.episodes, make_rng(seed))
    print(f"episodes: {args.episodes}")
    print(f"success rate: {success.mean():.4f} ± {success.std():.4f}")
    print(f"object displacement: {disp.mean():.4f} ± {disp.std():.4f}")
    return EXIT_OK


# -- estimate-mi ------------------------------------------------------------------------


def read_numeric_csv(path) -> tuple[list, np.ndarray]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    if len(rows) < 2:
        raise UsageError(f"{path}: need a header row and at least one data row")
    header = [h.strip() for h in rows[0]]
    data = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != len(header):
            raise UsageError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            data.append([float(v) for v in row])
        except ValueError:
            raise UsageError(f"{path}:{lineno}: non-numeric value") from None
    return header, np.array(data, dtype=np.float64)


def cmd_estimate_mi(args) -> int:
    from .mi import estimate_mi_pairs

    header, data = read_numeric_csv(args.data)
    cols = {}
    for role, spec in (("x", args.x), ("y", args.y)):
        names = [c.strip() for c in spec.split(",") if c.strip()]
        missing = [c for c in names if c not in header]
        if not names or missing:
            raise UsageError(f"--{role}: unknown column(s) {missing or spec!r}; available: {', '.join(header)}")
        cols[role] = names
    xs = data[:, [header.index(c) for c in cols["x"]]]
    ys = data[:, [header.index(c) for c in cols["y"]]]
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise UsageError("selected columns contain non-finite values")
    try:
        est = estimate_mi_pairs(xs, ys, steps=args.steps, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"{est:.6f}")
    if args.output:
        line = f"{'|'.join(cols['x'])},{'|'.join(cols['y'])},{len(xs)},{args.steps},{args.seed},{est!r}\n"
        atomic_write_text(args.output, "x_cols,y_cols,n,steps,seed,mi_nats\n" + line)
    return EXIT_OK


# -- discover -------------------------------------------------------------------------------


def cmd_discover(args) -> int:
    from .discovery import StateGroupSpec, collect_random_rollouts, rank_controllable
    from .ndmath import make_rng

    if args.env not in ENV_NAMES:
        raise UsageError(f"unknown env {args.env!r}; choose from {', '.join(ENV_NAMES)}")
    if args.episodes < 1 or args.seeds < 1:
        raise UsageError("--episodes and --seeds must be at least 1")
    env = make_env(args.env)
    seed = _seed(args.seed)
    pairs = collect_random_rollouts(env, args.episodes, make_rng(seed))
    report = rank_controllable(
        pairs,
        StateGroupSpec.from_env(env),
        steps=args.steps,
        seeds=[seed + k for k in range(args.seeds)],
        delta=not args.raw_states,
        threshold=args.threshold,
    )
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "discovery.csv", report.to_csv())
    atomic_write_text(out / "discovery.txt", report.to_text())
    print(report.to_text(), end="")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="misc-rl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train an agent")
    t.add_argument("--config", help="key = value config file (flags override it)")
    t.add_argument("--quiet", action="store_true")
    _add_config_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint with the deterministic policy")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--env", default=None, help="defaults to the checkpoint's env")
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seed", type=int, default=None)
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("estimate-mi", help="estimate I(X;Y) in nats from CSV columns")
    m.add_argument("data")
    m.add_argument("--x", required=True, help="comma-separated column names")
    m.add_argument("--y", required=True, help="comma-separated column names")
    m.add_argument("--steps", type=int, default=3000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--output", help="write the estimate as a one-row CSV")
    m.set_defaults(func=cmd_estimate_mi)

    d = sub.add_parser("discover", help="rank state groups by action MI")
    d.add_argument("--env", default="point-push")
    d.add_argument("--episodes", type=int, default=100)
    d.add_argument("--seeds", type=int, default=3)
    d.add_argument("--seed", type=int, default=None)
    d.add_argument("--steps", type=int, default=3000)
    d.add_argument("--threshold", type=float, default=0.5)
    d.add_argument("--raw-states", action="store_true", help="use s_{t+1} instead of s_{t+1} - s_t")
    d.add_argument("--output-dir", default=".")
    d.set_defaults(func=cmd_discover)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
