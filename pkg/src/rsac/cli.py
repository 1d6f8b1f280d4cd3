"""Command-line entry point: ``rsac <command> [options]``.

Exit codes: 0 success, 1 verification failure, 2 invalid input
(config or metrics files), 3 training divergence.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3


def _out_dir(args, command: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("RSAC_OUT_DIR", "runs")) / command


def _config(args) -> ExperimentConfig:
    cfg = load(args.config) if args.config else ExperimentConfig().with_overrides()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides(train={"seeds": [args.seed]})
    return cfg


def _logger(args):
    if args.quiet:
        return None
    return lambda msg: print(msg, flush=True)


def cmd_train(args) -> int:
    from .harness import run_training
    cfg = _config(args)
    out = _out_dir(args, "train")
    rows = run_training(cfg, out, workers=args.workers, resume=args.resume, log=_logger(args))
    if not args.quiet:
        print(f"{len(rows)} metric rows written to {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_constraint_study(args) -> int:
    from .harness import run_constraint_study
    cfg = _config(args)
    out = _out_dir(args, "constraint-study")
    run_constraint_study(cfg, out, workers=args.workers, log=_logger(args))
    if not args.quiet:
        print(f"summary written to {out / 'summary.csv'}")
    return EXIT_OK


def cmd_sweep_baseline(args) -> int:
    from .harness import run_baseline_sweep
    cfg = _config(args)
    out = _out_dir(args, "sweep-baseline")
    run_baseline_sweep(cfg, out, log=_logger(args))
    if not args.quiet:
        print(f"report written to {out / 'baseline.csv'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import format_table, run_checks
    results = run_checks()
    if not args.quiet or not all(r["passed"] for r in results):
        print(format_table(results))
    return EXIT_OK if all(r["passed"] for r in results) else EXIT_VERIFY


def cmd_plot(args) -> int:
    from .plotting import PlotInputError, plot_metrics
    try:
        paths = plot_metrics(args.metrics, _out_dir(args, "plots"))
    except PlotInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if not args.quiet:
        for p in paths:
            print(p)
    return EXIT_OK


def cmd_record_demo(args) -> int:
    from .envs import save_transitions
    from .harness import demo_transitions, make_demo, make_env
    cfg = _config(args)
    if args.episodes is not None:
        cfg = cfg.with_overrides(demo={"episodes": args.episodes})
    demo = make_demo(cfg, make_env(cfg))
    if demo is None:
        raise ConfigError("demo.name: 'none' has nothing to record")
    transitions = demo_transitions(cfg.with_overrides(demo={"path": None}), demo)
    out = Path(args.out) if args.out else _out_dir(args, "record-demo") / "demo.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_transitions(out, transitions)
    if not args.quiet:
        print(f"{len(transitions)} transitions written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rsac", description="Regularized soft actor-critic experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, seed=True, workers=False):
        if config:
            p.add_argument("--config", metavar="PATH", help="YAML experiment config (defaults if omitted)")
        p.add_argument("--out", metavar="DIR", help="output location (default: $RSAC_OUT_DIR/<command>)")
        if seed:
            p.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
        if workers:
            p.add_argument("--workers", type=int, default=1, help="parallel worker processes for seeds")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")

    p = sub.add_parser("train", help="train every configured seed")
    common(p, workers=True)
    p.add_argument("--resume", action="store_true", help="continue from existing per-seed checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("constraint-study", help="train the seed grid for every ce_target level")
    common(p, workers=True)
    p.set_defaults(func=cmd_constraint_study)

    p = sub.add_parser("sweep-baseline", help="reward-shaped baseline over the imitation-reward sweep")
    common(p)
    p.set_defaults(func=cmd_sweep_baseline)

    p = sub.add_parser("verify", help="run the oracle suite")
    p.add_argument("--quiet", action="store_true", help="print the table only on failure")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot", help="SVG charts of CE, total reward and beta from metrics CSVs")
    p.add_argument("metrics", nargs="+", metavar="METRICS_CSV")
    common(p, config=False, seed=False)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("record-demo", help="roll out the scripted demonstrator to a JSON-lines file")
    common(p, seed=False)
    p.add_argument("--episodes", type=int, help="number of demonstration episodes")
    p.set_defaults(func=cmd_record_demo)
    return parser


def main(argv=None) -> int:
    from .harness import DivergenceError
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
