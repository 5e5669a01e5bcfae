"""Command-line interface.

Subcommands: bounds (kernel bound estimation), synth (controller design),
train (one variant/env), bench (grid of variants), report (aggregate
scores), fft (spectra from recorded traces). Exit codes: 0 success,
2 configuration, 3 synthesis, 4 training, 1 other.
"""

from __future__ import annotations

import os
import sys

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
from pathlib import Path

from ctrlq.errors import ConfigurationError, SynthesisError, TrainingError


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="key=value config file")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def _load_config(args: argparse.Namespace):
    from ctrlq import harness

    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        overrides[key.strip()] = val
    return harness.parse_config(args.config, overrides)


def cmd_bounds(args: argparse.Namespace) -> int:
    from ctrlq import harness

    config = _load_config(args)
    bounds = harness.collect_bounds(config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    harness.write_bounds(bounds, out)
    print(f"theta1 in [{bounds.theta1_min:.2f}, {bounds.theta1_max:.2f}], "
          f"ratio in [{bounds.ratio_min:.4f}, {bounds.ratio_max:.4f}] -> {out}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    from ctrlq import harness

    config = _load_config(args)
    bounds = harness.resolve_bounds(config)
    controller, gamma = harness.synthesize_controller(config, bounds)
    if controller is None:
        raise ConfigurationError(
            f"variant {config.variant!r} does not use a synthesized controller"
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    harness.write_controller(out, controller, gamma=gamma)
    print(f"{config.variant}: gamma/worst-norm = {gamma:.4f} -> {out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    from ctrlq import harness

    config = _load_config(args)
    summary = harness.run(config)
    for res in summary["results"]:
        print(f"seed {res['seed']}: final100 = {res['final100']:.2f}")
    for fail in summary["failures"]:
        print(f"seed {fail['seed']}: FAILED ({fail['error']})", file=sys.stderr)
    return 0 if not summary["failures"] else 4


def cmd_bench(args: argparse.Namespace) -> int:
    import dataclasses

    from ctrlq import harness

    config = _load_config(args)
    variants = args.variants.split(",")
    env_ids = args.envs.split(",")
    root = Path(config.outdir)
    run_dirs = []
    for env_id in env_ids:
        for variant in variants:
            sub = root / f"{env_id}_{variant}"
            cell = dataclasses.replace(
                config, env_id=env_id, variant=variant, outdir=str(sub)
            )
            print(f"== {env_id} / {variant} ==", flush=True)
            harness.run(cell)
            run_dirs.append(sub)
    rows = harness.report(run_dirs)
    harness.write_report_csv(rows, root / "comparison.csv")
    print(harness.format_report(rows))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    from ctrlq import harness

    rows = harness.report(args.run_dirs)
    if args.out is not None:
        harness.write_report_csv(rows, args.out)
    print(harness.format_report(rows))
    return 0


def cmd_fft(args: argparse.Namespace) -> int:
    from ctrlq import harness

    outdir = Path(args.outdir or Path(args.traces).parent)
    outdir.mkdir(parents=True, exist_ok=True)
    written = harness.write_fft_csvs(args.traces, outdir, dt=args.dt)
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctrlq",
        description="Controlled deep Q-learning: build, train, and analyze",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds", help="estimate kernel bounds from an uncontrolled run")
    _add_common(p)
    p.add_argument("--out", default="bounds.txt")
    p.set_defaults(fn=cmd_bounds)

    p = sub.add_parser("synth", help="synthesize a controller from bounds + weights")
    _add_common(p)
    p.add_argument("--out", default="controller.txt")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train one variant on one environment")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("bench", help="full grid of variants x environments")
    _add_common(p)
    p.add_argument("--variants", default="h2_scheduled,hinf_dynamic,hinf_fixed,ddqn")
    p.add_argument("--envs", default="cartpole,acrobot,mountaincar")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("report", help="aggregate run directories into a summary")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("fft", help="emit spectra CSVs from a traces file")
    p.add_argument("traces")
    p.add_argument("--outdir", default=None)
    p.add_argument("--dt", type=float, default=5e-5,
                   help="sample spacing on the gradient-flow clock (default: alpha)")
    p.set_defaults(fn=cmd_fft)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SynthesisError as exc:
        print(f"synthesis error: {exc}", file=sys.stderr)
        return 3
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
