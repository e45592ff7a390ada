"""Command-line front end: train, eval, verify, config."""
from __future__ import annotations

import argparse
import json
import os
import sys

from .config import DisturbanceSchedule, RunConfig

MODE_NAMES = {"mpc": "mpc_guided", "ppo-only": "ppo_only"}


def _cmd_train(args) -> int:
    from .harness import train

    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg = cfg.with_mode(MODE_NAMES[args.mode])
    if args.episodes is not None:
        cfg = cfg.replace("ppo", max_episodes=args.episodes)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.yaml"), "w") as fh:
        fh.write(cfg.dump())

    def progress(row):
        if not args.quiet:
            print(f"update {row['update']:4d}  episodes {row['episodes']:6d}  "
                  f"return {row['mean_return']:10.1f}  norm {row['normalized_reward']:+.3f}  "
                  f"kl {row['kl']:.2e}  success {row['success_rate']:.2f}", flush=True)

    train(cfg, seed=args.seed, out_dir=args.out, checkpoint_every=args.checkpoint_every,
          progress=progress)
    print(f"wrote {os.path.join(args.out, 'train_log.csv')} and checkpoint.fcp")
    return 0


def _cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .harness import evaluate

    agent, cfg, meta = load_checkpoint(args.checkpoint)
    schedule = DisturbanceSchedule.load(args.schedule) if args.schedule else DisturbanceSchedule.default()
    _, metrics = evaluate(agent, cfg, schedule, duration=args.duration, out_dir=args.out)
    for m in metrics:
        tts = "never" if m.time_to_success != m.time_to_success else f"{m.time_to_success:.1f}s"
        print(f"window {m.start:5.1f}-{m.end:5.1f}s  peak {m.peak_excursion:.3f} m  "
              f"success after {tts}  steady {m.steady_position_error:.3f} m / "
              f"{m.steady_angle_error * 57.29577951308232:.2f} deg")
    print(f"wrote {os.path.join(args.out, 'eval_log.csv')} and eval_metrics.csv "
          f"(checkpoint seed {meta.get('seed')}, mode {meta.get('mode')})")
    return 0


def _cmd_verify(args) -> int:
    from .verify import run_suites

    results = run_suites(args.suites or ["all"], out_dir=args.out)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def _cmd_config(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    sys.stdout.write(cfg.dump())
    if args.schedule:
        sys.stdout.write("# default disturbance schedule\n")
        sys.stdout.write(json.dumps(DisturbanceSchedule.default().to_dict(), indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="floatctl",
                                     description="MPC-guided PPO for a planar floating platform")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy")
    p.add_argument("--config", help="YAML run configuration (defaults when omitted)")
    p.add_argument("--mode", choices=sorted(MODE_NAMES), default="mpc")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--episodes", type=int, help="override the episode cap")
    p.add_argument("--checkpoint-every", type=int, default=5, help="updates between checkpoints")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="run a checkpoint through a disturbance schedule")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--schedule", help="YAML schedule (default: four pushes at 20/40/60/80 s)")
    p.add_argument("--duration", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("verify", help="run property suites; exit code 0 when all pass")
    p.add_argument("suites", nargs="*",
                   choices=["dynamics", "mpc", "pwpf", "ppo", "reward", "harness", "all"])
    p.add_argument("--out", default="verify_out", help="directory for the MPC and PWPF CSV dumps")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("config", help="print the effective configuration as YAML")
    p.add_argument("--config")
    p.add_argument("--schedule", action="store_true", help="also print the default schedule")
    p.set_defaults(func=_cmd_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
