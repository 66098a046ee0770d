#!/usr/bin/env python3
"""
Main entry point for TRC: CVaR-constrained trust-region training, evaluation and verification.
"""

import argparse
import os
import sys
from typing import List, Optional

# Add src directory to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pandas as pd

from config import ExperimentConfig, apply_overrides, load_config, parse_override_args, save_config
from diffnet import load_checkpoint
from evaluator import evaluate_policy, summarize_episodes
from plot_data import export_plot_data
from tabular_oracle import run_ensemble, summarize_checks
from trainer import make_env_factory, train
from utils import CheckpointError, ConfigError, DomainError, ensure_results_dir, setup_logging

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"❌ {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(description="TRC: CVaR-constrained trust-region safe RL")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=UsageParser)

    p_train = sub.add_parser("train", help="Train a policy; extra --section.key value pairs override the config")
    p_train.add_argument("config", help="Path to a flat section.key = value config file")
    p_train.add_argument("--preset", choices=["td", "gae", "mc"], default=None,
                         help="GAE lambda preset: td (0.0), gae (0.97), mc (1.0)")
    p_train.add_argument("--constraint-mode", choices=["cvar", "expectation"], default=None,
                         help="Shortcut for --train.constraint_mode")
    p_train.add_argument("--resume", default=None, help="Checkpoint to continue training from")
    p_train.add_argument("--no-progress", action="store_true", help="Disable the epoch progress bar")

    p_eval = sub.add_parser("eval", help="Evaluate the mean action of a checkpointed policy")
    p_eval.add_argument("checkpoint", help="Path to a .trc checkpoint")
    p_eval.add_argument("--config", default=None, help="Config describing the environment (default: nav2d defaults)")
    p_eval.add_argument("--episodes", type=int, default=10, help="Number of evaluation episodes")
    p_eval.add_argument("--seed", type=int, default=0, help="Seed of the first episode")
    p_eval.add_argument("--horizon", type=int, default=None, help="Steps per episode (default: train.horizon)")
    p_eval.add_argument("--output", default=None, help="Per-episode CSV (default: next to the checkpoint)")
    p_eval.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    p_verify = sub.add_parser("verify", help="Check the bounds and identities on random tabular MDPs")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--ensemble-size", type=int, default=200)
    p_verify.add_argument("--alpha", type=float, default=0.125)
    p_verify.add_argument("--cost-low", type=float, default=0.5,
                          help="Lower end of the uniform cost range (upper end is 1)")
    p_verify.add_argument("--perturbation", type=float, default=0.02,
                          help="Mix weight of the random policy in pi'; negative draws pi' independently")
    p_verify.add_argument("--corrupt-rhs", type=float, default=1.0,
                          help="Scale every bound's right-hand side (0.5 is a negative control)")
    p_verify.add_argument("--output", default=None, help="Write every check row to this CSV")
    p_verify.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    p_export = sub.add_parser("export-plot-data", help="Split metrics.csv into per-metric series files")
    p_export.add_argument("csv", help="metrics.csv written by train")
    p_export.add_argument("out_dir", help="Directory for the series files")
    p_export.add_argument("--plot", action="store_true", help="Also render a PNG per metric")
    return parser


def cmd_train(args, extra: List[str]) -> int:
    overrides = parse_override_args(extra)
    if args.constraint_mode is not None:
        overrides.append(("train.constraint_mode", args.constraint_mode))
    config = apply_overrides(load_config(args.config), overrides, args.preset)

    results_dir = ensure_results_dir(config.output.dir)
    setup_logging(config.output.log_level, results_dir)
    save_config(config, os.path.join(results_dir, "config.cfg"))
    checkpoint = load_checkpoint(args.resume) if args.resume else None

    print(f"🚀 Starting TRC training")
    print(f"   Environment: {config.env_kind}")
    print(f"   Constraint: {config.train.constraint_mode} (alpha={config.risk.alpha}, limit={config.risk.limit})")
    print(f"   GAE lambda: {config.train.lam}")
    print(f"   Epochs: {config.train.epochs} x {config.train.episodes_per_epoch} episodes")
    print(f"   Seed: {config.train.seed}")
    print(f"   Results Dir: {results_dir}")
    print()

    env_factory = make_env_factory(config.env_kind, config.env, config.tabular, config.risk.gamma)
    reports = train(config.train, config.risk, env_factory, results_dir,
                    record_wall_time=config.output.record_wall_time, checkpoint=checkpoint,
                    progress=not args.no_progress)
    if reports:
        last = reports[-1]
        print(f"✅ Training finished at epoch {last.epoch}: return={last.mean_return:.3f}, "
              f"CV rate={last.mean_cv_rate:.4f}, CVaR={last.cvar_cv_rate:.4f}, score={last.score:.3f}")
    else:
        print("⚠️  Checkpoint already at the final epoch; nothing to train")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.episodes <= 0:
        raise DomainError(f"--episodes must be positive, got {args.episodes}")
    output = args.output or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "eval_episodes.csv")
    setup_logging(args.log_level, ensure_results_dir(os.path.dirname(os.path.abspath(output))))

    checkpoint = load_checkpoint(args.checkpoint)
    env = make_env_factory(config.env_kind, config.env, config.tabular, config.risk.gamma)()
    if env.observation_dim != checkpoint.policy.mean_spec.input_dim or env.action_dim != checkpoint.policy.action_dim:
        raise ConfigError(f"checkpoint ({checkpoint.policy.mean_spec.input_dim} obs, "
                          f"{checkpoint.policy.action_dim} actions) does not fit the {config.env_kind} environment")
    horizon = args.horizon or config.train.horizon

    records = evaluate_policy(env, checkpoint.policy, checkpoint.normalizer, args.episodes, horizon, args.seed)
    summary = summarize_episodes(records, config.risk.alpha)
    pd.DataFrame([{"episode": i, "return": r.episode_return, "cv_count": r.cv_count, "length": r.length,
                   "cv_rate": r.cv_rate, "score": r.score} for i, r in enumerate(records)]).to_csv(output, index=False)

    print(f"📊 Evaluation of {args.checkpoint} (epoch {checkpoint.epoch}, {args.episodes} episodes)")
    print(f"   Mean return: {summary['mean_return']:.4f}")
    print(f"   Mean CV rate: {summary['mean_cv_rate']:.4f}")
    print(f"   CVaR({config.risk.alpha}) of CV rate: {summary['cvar_cv_rate']:.4f}")
    print(f"   Score: {summary['score']:.4f}")
    print(f"   Episodes CSV: {output}")
    return EXIT_OK


def cmd_verify(args) -> int:
    log_dir = os.path.dirname(os.path.abspath(args.output)) if args.output else os.getcwd()
    setup_logging(args.log_level, ensure_results_dir(log_dir))
    if args.ensemble_size <= 0:
        raise DomainError(f"--ensemble-size must be positive, got {args.ensemble_size}")
    perturbation = args.perturbation if args.perturbation >= 0 else None
    print(f"🔍 Verifying bounds on {args.ensemble_size} random tabular MDPs (seed {args.seed})")
    results = run_ensemble(args.seed, args.ensemble_size, alpha=args.alpha, cost_low=args.cost_low,
                           perturbation=perturbation, rhs_scale=args.corrupt_rhs)
    summary = summarize_checks(results)
    print(summary.to_string(index=False))
    if args.output:
        pd.DataFrame([{"check": r.name, "lhs": r.lhs, "rhs": r.rhs, "slack": r.slack,
                       "passed": r.passed, "skipped": r.skipped} for r in results]).to_csv(args.output, index=False)

    failures = int(summary["failures"].sum())
    if failures:
        print(f"❌ {failures} check(s) failed")
        return EXIT_VERIFY
    skipped = sum(r.skipped for r in results)
    print(f"✅ All {len(results)} checks passed ({skipped} skipped)")
    return EXIT_OK


def cmd_export_plot_data(args) -> int:
    written = export_plot_data(args.csv, args.out_dir, plot=args.plot)
    print(f"✅ Wrote {len(written)} series to {args.out_dir}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    if extra and args.command != "train":
        parser.error(f"unrecognized arguments: {' '.join(extra)}")

    try:
        if args.command == "train":
            return cmd_train(args, extra)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "verify":
            return cmd_verify(args)
        return cmd_export_plot_data(args)
    except KeyboardInterrupt:
        print("\n🛑 Interrupted by user")
        return EXIT_USAGE
    except (ConfigError, DomainError) as e:
        print(f"❌ {e}")
        return EXIT_USAGE
    except CheckpointError as e:
        print(f"❌ {e}")
        return EXIT_RUNTIME
    except Exception as e:
        print(f"❌ {args.command} failed: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
