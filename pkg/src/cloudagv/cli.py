"""Command-line front end: scenario configs in, CSV + metrics + figures out."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .sim import (
    SWEEPABLE_PARAMETERS,
    SimulationDiverged,
    Trace,
    run,
    sweep,
    sweep_table,
)
from .stability import reference_stability_map
from .reference import generate_track

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_DIVERGED = 4


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides")
    group.add_argument("--kx", type=float, help="longitudinal gain [1/s]")
    group.add_argument("--ky", type=float, help="lateral gain")
    group.add_argument("--ktheta", type=float, help="heading gain")
    group.add_argument("--nu-max", type=float, help="translational velocity limit [m/s]")
    group.add_argument("--ts", type=float, help="sampling time [s]")
    group.add_argument("--seed", type=int, help="outage model seed")
    group.add_argument("--out-dir", help="output directory")
    group.add_argument("--plots", choices=("on", "off"), help="toggle figure rendering")


def _collect_overrides(args) -> dict:
    overrides = {}
    if args.kx is not None:
        overrides["gains.kx"] = args.kx
    if args.ky is not None:
        overrides["gains.ky"] = args.ky
    if args.ktheta is not None:
        overrides["gains.ktheta"] = args.ktheta
    if args.nu_max is not None:
        overrides["nu_max"] = args.nu_max
    if args.ts is not None:
        overrides["track.ts"] = args.ts
    if args.seed is not None:
        overrides["outage.seed"] = args.seed
    if args.out_dir is not None:
        overrides["output.directory"] = args.out_dir
    if args.plots is not None:
        overrides["output.plots"] = args.plots == "on"
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloudagv",
        description=(
            "Simulate a cloud-controlled AGV tracking a reference path with "
            "position feedback over a lossy uplink; analyze per-step stability."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one scenario")
    p_run.add_argument("--config", required=True, help="scenario YAML file")
    _add_override_flags(p_run)

    p_sweep = sub.add_parser("sweep", help="run one scenario over a list of parameter values")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--param", required=True, choices=SWEEPABLE_PARAMETERS)
    p_sweep.add_argument("--values", required=True, help="comma-separated values, e.g. 5,25,250")
    p_sweep.add_argument("--jobs", type=int, default=1, help="worker threads")
    _add_override_flags(p_sweep)

    p_map = sub.add_parser(
        "stability-map",
        help="eigenvalue stability grid over consecutive outages and kx",
    )
    p_map.add_argument("--config", required=True)
    p_map.add_argument("--n-ul-range", default="0:200",
                       help="lo:hi[:step] or comma list of outage counts")
    p_map.add_argument("--kx-range", default="5,25,250",
                       help="lo:hi[:step] or comma list of kx values")
    _add_override_flags(p_map)

    p_plot = sub.add_parser("plot", help="render figures from existing trace CSVs")
    p_plot.add_argument("traces", nargs="+", help="trace CSV files")
    p_plot.add_argument("--out-dir", default=".", help="where to write the figures")
    p_plot.add_argument("--format", default="svg", choices=("svg", "png", "pdf"))
    p_plot.add_argument("--monitor", default="world_y", choices=("world_y", "body_lateral"))
    p_plot.add_argument("--nu-max", type=float, default=None)

    return parser


def _load(args) -> ExperimentConfig:
    return load_config(args.config, _collect_overrides(args))


def _write_metrics(path: Path, cfg: ExperimentConfig, metrics_dict: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in cfg.provenance_lines():
            fh.write(f"# {line}\n")
        for key, value in metrics_dict.items():
            fh.write(f"{key} = {value}\n")


def _render_run_plots(cfg: ExperimentConfig, trace: Trace, out: Path) -> List[Path]:
    from . import plots

    df = trace.to_dataframe()
    desc = "; ".join(cfg.provenance_lines())
    fmt = cfg.plot_format
    labeled = [(cfg.name, df)]
    return [
        plots.plot_track_overlay(labeled, out / f"track.{fmt}", desc),
        plots.plot_y_error(labeled, out / f"y_error.{fmt}", cfg.sim.error_monitor, desc),
        plots.plot_velocity(labeled, out / f"velocity.{fmt}", cfg.sim.nu_max, desc),
    ]


def _fmt_value(v) -> str:
    if isinstance(v, float) and v == int(v):
        return str(int(v))
    return str(v)


def cmd_run(args) -> int:
    cfg = _load(args)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    try:
        trace, metrics = run(cfg.sim)
    except SimulationDiverged as exc:
        partial = out / "trace_partial.csv"
        exc.trace.write_csv(partial, cfg.provenance_lines())
        print(f"error: {exc} (partial trace in {partial})", file=sys.stderr)
        return EXIT_DIVERGED
    trace.write_csv(out / "trace.csv", cfg.provenance_lines())
    _write_metrics(out / "metrics.txt", cfg, metrics.to_dict())
    if cfg.plots:
        _render_run_plots(cfg, trace, out)
    print(
        f"{cfg.name}: {len(trace)} steps, settled={metrics.settled} "
        f"(k={metrics.settling_time_steps}), damping={metrics.damping_class}, "
        f"peak |nu|={metrics.peak_abs_nu:.3g} m/s -> {out}"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    raw_values = [v.strip() for v in args.values.split(",") if v.strip() != ""]
    if args.param == "seed":
        values = [int(v) for v in raw_values]
    else:
        values = [float(v) for v in raw_values]
    deduped = list(dict.fromkeys(values))
    if len(deduped) != len(values):
        print("warning: duplicate sweep values removed", file=sys.stderr)
    values = deduped
    if not values:
        print("warning: empty value list; nothing to run", file=sys.stderr)

    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    entries = sweep(cfg.sim, args.param, values, jobs=args.jobs)

    table = sweep_table(entries, args.param)
    with open(out / "sweep.csv", "w", encoding="utf-8") as fh:
        for line in cfg.provenance_lines():
            fh.write(f"# {line}\n")
        table.to_csv(fh, index=False, lineterminator="\n")

    labeled = []
    for entry in entries:
        tag = f"{args.param}_{_fmt_value(entry.value)}"
        if entry.error is not None:
            print(f"warning: {tag} failed: {entry.error}", file=sys.stderr)
            continue
        entry.trace.write_csv(out / f"trace_{tag}.csv", cfg.provenance_lines())
        _write_metrics(out / f"metrics_{tag}.txt", cfg, entry.metrics.to_dict())
        labeled.append((f"{args.param}={_fmt_value(entry.value)}", entry.trace.to_dataframe()))

    if cfg.plots and labeled:
        from . import plots

        desc = "; ".join(cfg.provenance_lines())
        fmt = cfg.plot_format
        plots.plot_track_overlay(labeled, out / f"track_overlay.{fmt}", desc)
        plots.plot_y_error(labeled, out / f"y_error.{fmt}", cfg.sim.error_monitor, desc)
        plots.plot_velocity(labeled, out / f"velocity.{fmt}", cfg.sim.nu_max, desc)

    ok = sum(1 for e in entries if e.error is None)
    print(f"{cfg.name}: sweep over {args.param} -> {ok}/{len(entries)} runs ok -> {out}")
    return EXIT_OK


def _parse_range(text: str, integer: bool) -> List:
    text = text.strip()
    if not text:
        return []
    cast = int if integer else float
    if ":" in text:
        parts = text.split(":")
        if len(parts) not in (2, 3):
            raise ValueError(f"bad range {text!r}; expected lo:hi[:step]")
        lo, hi = cast(parts[0]), cast(parts[1])
        step = cast(parts[2]) if len(parts) == 3 else (1 if integer else 1.0)
        if step <= 0:
            raise ValueError(f"range step must be positive in {text!r}")
        values = list(np.arange(lo, hi + (step * 0.5 if not integer else 1), step))
        return [cast(v) for v in values if v <= hi + 1e-12]
    return [cast(v) for v in text.split(",") if v.strip() != ""]


def cmd_stability_map(args) -> int:
    cfg = _load(args)
    try:
        n_vals = _parse_range(args.n_ul_range, integer=True)
        kx_vals = _parse_range(args.kx_range, integer=False)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not n_vals or not kx_vals:
        print("error: empty n_ul or kx range", file=sys.stderr)
        return EXIT_CONFIG

    traj = generate_track(cfg.sim.track)
    try:
        result = reference_stability_map(
            traj.theta, traj.nu, cfg.sim.gains, cfg.sim.track.ts,
            n_vals, kx_vals, tol=cfg.sim.stability_tol,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    import pandas as pd

    with open(out / "stability_map.csv", "w", encoding="utf-8") as fh:
        for line in cfg.provenance_lines():
            fh.write(f"# {line}\n")
        pd.DataFrame(result.to_records()).to_csv(fh, index=False, lineterminator="\n")

    thresholds = result.threshold_n_ul()
    with open(out / "thresholds.txt", "w", encoding="utf-8") as fh:
        for line in cfg.provenance_lines():
            fh.write(f"# {line}\n")
        for kx, thr in zip(result.kx_values, thresholds):
            fh.write(f"first_unstable_n_ul[kx={_fmt_value(float(kx))}] = {thr}\n")

    if cfg.plots:
        from . import plots

        plots.plot_stability_heatmap(
            result.n_ul_values,
            result.kx_values,
            result.worst_max_magnitude,
            out / f"stability_map.{cfg.plot_format}",
            "; ".join(cfg.provenance_lines()),
        )
    for kx, thr in zip(result.kx_values, thresholds):
        label = "none" if thr is None else str(thr)
        print(f"kx={_fmt_value(float(kx))}: first unstable n_ul = {label}")
    print(f"{cfg.name}: stability map {len(n_vals)}x{len(kx_vals)} cells -> {out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from . import plots

    labeled = []
    for item in args.traces:
        path = Path(item)
        if not path.is_file():
            print(f"error: trace file not found: {path}", file=sys.stderr)
            return EXIT_MISSING
        labeled.append((path.stem, Trace.read_csv(path)))
    out = Path(args.out_dir)
    fmt = args.format
    try:
        plots.plot_track_overlay(labeled, out / f"track_overlay.{fmt}")
        plots.plot_y_error(labeled, out / f"y_error.{fmt}", args.monitor)
        plots.plot_velocity(labeled, out / f"velocity.{fmt}", args.nu_max)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"figures written to {out}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": cmd_run,
        "sweep": cmd_sweep,
        "stability-map": cmd_stability_map,
        "plot": cmd_plot,
    }
    try:
        return handlers[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
