"""Command-line front end: run, sweep, trace, and plot subcommands.

Every subcommand reads a YAML scenario file, applies the command-line
overrides, executes deterministically, and writes machine-readable
outputs (runs.csv, summary.json, trace.ndjson).  Figures are opt-in via
--plots or the plot subcommand and are always rendered from runs.csv.
Exit status is 0 on success, 1 on configuration or I/O errors, and 2 on
command-line usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path
from typing import Optional, Sequence

from ..simulation import RunMetrics
from .config import ConfigError, ScenarioConfig, parse_config
from .experiment import RunResult, run_experiment, run_sweep, sweep_axes
from .plots import render_plots
from .report import emit_report

__all__ = ["main"]


def _values_list(text: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated numbers, got {text!r}"
        ) from exc
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="securagg",
        description=(
            "Deterministic wireless sensor network simulator for secure "
            "distributed maximum estimation."
        ),
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run_cmd = commands.add_parser(
        "run", help="execute one scenario and write runs.csv + summary.json"
    )
    run_cmd.add_argument("--config", required=True, help="YAML scenario file")
    run_cmd.add_argument(
        "--seed",
        type=int,
        default=None,
        help="master seed; stream seeds become seed..seed+3",
    )
    run_cmd.add_argument(
        "--security",
        choices=("on", "off"),
        default=None,
        help="override the scenario's security flag",
    )
    run_cmd.add_argument("--out", default=None, help="output directory")
    run_cmd.add_argument(
        "--plots",
        action="store_true",
        help="also render PNG figures from the emitted runs.csv",
    )

    sweep_cmd = commands.add_parser(
        "sweep", help="run one axis across values x repetitions, seed-paired"
    )
    sweep_cmd.add_argument("--config", required=True, help="YAML scenario file")
    sweep_cmd.add_argument(
        "--axis", required=True, help=f"one of: {', '.join(sweep_axes())}"
    )
    sweep_cmd.add_argument(
        "--values",
        required=True,
        type=_values_list,
        help="comma-separated axis values, e.g. 0.0,0.1,0.2",
    )
    sweep_cmd.add_argument(
        "--reps", required=True, type=int, help="repetitions per axis value"
    )
    sweep_cmd.add_argument("--out", default=None, help="output directory")
    sweep_cmd.add_argument(
        "--plots",
        action="store_true",
        help="also render PNG figures from the emitted runs.csv",
    )

    trace_cmd = commands.add_parser(
        "trace", help="execute one scenario and write an event trace"
    )
    trace_cmd.add_argument("--config", required=True, help="YAML scenario file")
    trace_cmd.add_argument(
        "--out", default=None, help="trace file path (default <out_dir>/trace.ndjson)"
    )

    plot_cmd = commands.add_parser(
        "plot", help="render PNG figures from an existing runs.csv"
    )
    plot_cmd.add_argument("--runs", required=True, help="runs.csv produced earlier")
    plot_cmd.add_argument("--out", default=None, help="directory for the figures")

    return parser


def _load_config(args: argparse.Namespace) -> ScenarioConfig:
    config = parse_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = config.with_master_seed(args.seed)
    security = getattr(args, "security", None)
    if security is not None:
        config = dataclasses.replace(config, security_enabled=security == "on")
    if getattr(args, "out", None) is not None:
        config = dataclasses.replace(config, out_dir=args.out)
    return config


def _run_line(metrics: RunMetrics, where: Path) -> str:
    return (
        f"run: {metrics.alive_count}/{metrics.node_count} nodes alive, "
        f"delivery={metrics.delivery_ratio:.3f}, rmse={metrics.rmse:.3f}, "
        f"detection={metrics.detection_rate:.3f}, fp={metrics.fp_rate:.3f}, "
        f"energy={metrics.total_spent_j:.2f} J -> {where}"
    )


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out_dir = Path(config.out_dir)
    metrics = run_experiment(config)
    result = RunResult(config=config, metrics=metrics)
    runs_csv = emit_report(result, "csv", out_dir / "runs.csv")
    emit_report(result, "json", out_dir / "summary.json")
    if args.plots:
        render_plots(runs_csv, out_dir)
    print(_run_line(metrics, out_dir))
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out_dir = Path(config.out_dir)
    result = run_sweep(config, args.axis, args.values, args.reps)
    runs_csv = emit_report(result, "csv", out_dir / "runs.csv")
    emit_report(result, "json", out_dir / "summary.json")
    if args.plots:
        render_plots(runs_csv, out_dir)
    overheads = [row.energy_overhead_pct for row in result.rows]
    mean_overhead = sum(overheads) / len(overheads)
    print(
        f"sweep {result.axis}: {len(result.values)} values x "
        f"{result.repetitions} reps = {len(result.rows)} runs, "
        f"mean energy overhead={mean_overhead:+.1f}% -> {out_dir}"
    )
    return 0


def _cmd_trace(args: argparse.Namespace) -> int:
    config = parse_config(args.config)
    if args.out is not None:
        target = Path(args.out)
    else:
        target = Path(config.out_dir) / "trace.ndjson"
    if target.parent != Path(""):
        target.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(target, "w", encoding="utf-8") as handle:
            metrics = run_experiment(config, trace=handle)
    except OSError as exc:
        raise OSError(f"cannot write trace to {target}: {exc}") from exc
    print(_run_line(metrics, target))
    return 0


def _cmd_plot(args: argparse.Namespace) -> int:
    runs_csv = Path(args.runs)
    out_dir = Path(args.out) if args.out is not None else runs_csv.parent
    written = render_plots(runs_csv, out_dir)
    if not written:
        print(f"plot: no data rows in {runs_csv}; nothing rendered")
        return 0
    print(f"plot: {len(written)} figure(s) -> {out_dir}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "trace": _cmd_trace,
    "plot": _cmd_plot,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, OSError) as exc:
        print(f"securagg: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
