"""Command-line entry point: learn zones, simulate scenarios, export plots.

Subcommands
    learn         ATC csv files -> zone model JSON + provenance report
    simulate      scenario name/config -> SimLog CSV, summary, plot bundle
    export-plots  zone model or SimLog -> CSV series + PNG figures

Exit codes partition outcomes for scripting: 0 ok, 1 input error,
2 safety violation, 3 goal timeout. SOCIALZONE_LOG sets log verbosity.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ingest import (
    ParseError,
    PipelineConfig,
    build_tracks,
    clip_to_region,
    exclude_time_intervals,
    parse_atc_csv,
)
from .interaction import AttentionalSpace, extract_interactions
from .simulator import (
    BUILTIN_NAMES,
    ScenarioConfig,
    ScenarioError,
    SimLog,
    builtin_scenarios,
    load_scenario,
    run_scenario,
)
from .zonelearn import ZONE_MODEL_SCHEMA, ZoneModel, build_zone_model

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_SAFETY = 2
EXIT_TIMEOUT = 3

SAFETY_TOL = 1e-6


def _configure_logging() -> None:
    level_name = os.environ.get("SOCIALZONE_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        try:
            level = int(level_name)
        except ValueError:
            level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="socialzone",
        description="Learn social zones from pedestrian logs and simulate "
                    "barrier-constrained navigation.",
    )
    parser.add_argument("--version", action="version", version=f"socialzone {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_learn = sub.add_parser("learn", help="run the zone-learning pipeline")
    p_learn.add_argument("inputs", nargs="+", help="ATC-format CSV files")
    p_learn.add_argument("--config", help="pipeline config JSON", default=None)
    p_learn.add_argument("--out", required=True, help="output zone model JSON path")
    p_learn.add_argument("--strict", action="store_true",
                         help="abort on the first malformed input line")

    p_sim = sub.add_parser("simulate", help="run closed-loop scenarios")
    p_sim.add_argument("scenarios", nargs="*",
                       help="built-in names or scenario config paths")
    p_sim.add_argument("--scenario", action="append", default=[],
                       help="additional scenario (repeatable)")
    p_sim.add_argument("--zones", default=None,
                       help="zone model JSON overriding the scenario's source")
    p_sim.add_argument("--out", default="simout", help="output directory")
    p_sim.add_argument("--list", action="store_true", help="list built-in scenarios")
    p_sim.add_argument("--parallel", action="store_true",
                       help="run scenarios in parallel processes")

    p_plot = sub.add_parser("export-plots", help="export plot series and figures")
    p_plot.add_argument("input", help="zone model JSON or SimLog CSV")
    p_plot.add_argument("--out", required=True, help="output directory")
    return parser


# ---------------------------------------------------------------------------
# learn


def _cmd_learn(args) -> int:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    samples = []
    parse_skipped = 0
    for path in args.inputs:
        part, report = parse_atc_csv(path, strict=args.strict)
        samples.extend(part)
        parse_skipped += report.skipped_count
        for line_no, reason in report.skipped[:20]:
            logger.info("%s line %d skipped: %s", path, line_no, reason)
    n_parsed = len(samples)
    if cfg.exclude_intervals:
        samples = exclude_time_intervals(samples, cfg.exclude_intervals)
    tracks = build_tracks(samples, period=cfg.resample_period_s)
    if not tracks:
        print("error: no tracks could be built from the inputs", file=sys.stderr)
        return EXIT_INPUT_ERROR
    if cfg.roi is not None:
        roi = cfg.roi
    else:
        pos = np.vstack([t.positions for t in tracks])
        pad = 1e-6
        from .ingest import RegionOfInterest
        roi = RegionOfInterest(
            (float(pos[:, 0].min()) - pad, float(pos[:, 1].min()) - pad),
            (float(pos[:, 0].max()) + pad, float(pos[:, 1].max()) + pad),
        )
        logger.info("no ROI configured; using data bounding box")
    in_region = clip_to_region(tracks, roi)
    n_in_region = int(sum(len(t) for t in in_region))
    records = extract_interactions(
        in_region,
        roi,
        AttentionalSpace(cfg.attentional_width_m, cfg.attentional_depth_m),
        window=cfg.window_s,
        min_init_dist=cfg.min_init_dist_m,
        min_speed=cfg.min_speed_m_s,
    )
    model = build_zone_model(
        records,
        speeds=cfg.speeds,
        k=cfg.lof_k,
        fraction=cfg.outlier_fraction,
        r_max=cfg.r_max_m,
    )
    if len(model) == 0:
        print("error: no zone could be fitted (empty or degenerate data)",
              file=sys.stderr)
        return EXIT_INPUT_ERROR
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    model.save(out_path)
    stages = {
        "parsed_samples": n_parsed,
        "in_region_samples": n_in_region,
        "interaction_records": len(records),
        "inlier_records": int(model.provenance.get("inlier_count", 0)),
    }
    report_doc = {
        "schema": "socialzone.learn-report/1",
        "inputs": list(args.inputs),
        "skipped_lines": parse_skipped,
        "stage_counts": stages,
        "speeds_fitted": model.provenance.get("speeds_fitted", []),
        "warnings": list(model.warnings),
    }
    report_path = out_path.with_name(out_path.stem + ".report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for key, value in stages.items():
        print(f"{key}: {value}")
    for msg in model.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    print(f"wrote {out_path} ({len(model)} zones) and {report_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def _resolve_scenarios(names: list[str], zones_override: str | None) -> list[ScenarioConfig]:
    builtin = None
    configs: list[ScenarioConfig] = []
    for name in names:
        if name in BUILTIN_NAMES:
            if builtin is None:
                builtin = builtin_scenarios()
            configs.append(builtin[name])
        else:
            configs.append(load_scenario(name))
    if zones_override is not None:
        model = ZoneModel.load(zones_override)
        for cfg in configs:
            cfg.zone_model = model
    return configs


def _scenario_outputs(config: ScenarioConfig, log: SimLog, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    log.write_csv(out_dir / "simlog.csv")
    log.write_summary(out_dir / "summary.json")
    config.save(out_dir / "scenario.json")
    plots = out_dir / "plots"
    plots.mkdir(exist_ok=True)
    _write_trajectory_series(log, plots / "trajectory.csv")
    _write_h_series(log, plots / "h_series.csv")
    if config.zone_model is not None:
        _write_zone_series(config.zone_model, plots)
    from . import plotting

    plotting.render_trajectory_figure(log, plots / "trajectory.png", config)
    plotting.render_h_figure(log, plots / "h_vs_time.png")
    if config.zone_model is not None:
        plotting.render_zone_figure(config.zone_model, plots / "zones.png")


def _run_one(config: ScenarioConfig, out_root: str) -> tuple[str, dict, str | None]:
    try:
        log = run_scenario(config)
    except ScenarioError as exc:
        return config.name, {}, str(exc)
    _scenario_outputs(config, log, Path(out_root) / config.name)
    return config.name, log.summary(), None


def _cmd_simulate(args) -> int:
    if args.list:
        for name in BUILTIN_NAMES:
            print(name)
        return EXIT_OK
    names = list(args.scenarios) + list(args.scenario)
    if not names:
        print("error: no scenario given (try `simulate --list`)", file=sys.stderr)
        return EXIT_INPUT_ERROR
    configs = _resolve_scenarios(names, args.zones)
    results: list[tuple[str, dict, str | None]] = []
    if args.parallel and len(configs) > 1:
        with concurrent.futures.ProcessPoolExecutor() as pool:
            futures = [pool.submit(_run_one, cfg, args.out) for cfg in configs]
            results = [f.result() for f in futures]
    else:
        results = [_run_one(cfg, args.out) for cfg in configs]
    worst = EXIT_OK
    for name, summary, error in results:
        if error is not None:
            print(f"{name}: error: {error}", file=sys.stderr)
            worst = max(worst, EXIT_INPUT_ERROR)
            continue
        min_h = summary.get("min_h_overall")
        reached = summary.get("goal_reach_time_s") is not None
        safe = min_h is None or min_h >= -SAFETY_TOL
        print(
            f"{name}: steps={summary['steps']} "
            f"min_h={'n/a' if min_h is None else f'{min_h:.4f}'} "
            f"goal={'%.1f s' % summary['goal_reach_time_s'] if reached else 'timeout'}"
        )
        if not safe:
            worst = EXIT_SAFETY if worst in (EXIT_OK, EXIT_TIMEOUT) else worst
        elif not reached and worst == EXIT_OK:
            worst = EXIT_TIMEOUT
    return worst


def _write_trajectory_series(log: SimLog, path: Path) -> None:
    cols = np.column_stack([log.times, log.states])
    _validate_series(cols)
    header = "t,x,y,vx,vy"
    np.savetxt(path, cols, delimiter=",", header=header, comments="", fmt="%.12g")


def _write_h_series(log: SimLog, path: Path) -> None:
    cols = np.column_stack([log.times, log.h_values]) if log.h_values.size else log.times[:, None]
    _validate_series(cols)
    header = ",".join(["t"] + [f"h_{j}" for j in range(len(log.barrier_names))])
    np.savetxt(path, cols, delimiter=",", header=header, comments="", fmt="%.12g")


def _write_zone_series(model: ZoneModel, out_dir: Path) -> None:
    for speed, zone in zip(model.speeds, model.zones):
        pts = zone.as_ellipse().boundary_points(128)
        _validate_series(pts)
        np.savetxt(
            out_dir / f"zone_boundary_{speed:.3g}.csv",
            pts, delimiter=",", header="x_m,y_m", comments="", fmt="%.12g",
        )


def _validate_series(arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise ValueError("plot series contains non-finite values")


# ---------------------------------------------------------------------------
# export-plots


def _cmd_export_plots(args) -> int:
    in_path = Path(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    from . import plotting

    if in_path.suffix.lower() == ".json":
        with open(in_path, encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("schema") != ZONE_MODEL_SCHEMA:
            print(f"error: {in_path} is not a zone model file", file=sys.stderr)
            return EXIT_INPUT_ERROR
        model = ZoneModel.load(in_path)
        _write_zone_series(model, out_dir)
        plotting.render_zone_figure(model, out_dir / "zones.png")
        print(f"wrote {len(model)} zone boundary files to {out_dir}")
        return EXIT_OK
    log = SimLog.read_csv(in_path)
    _write_trajectory_series(log, out_dir / "trajectory.csv")
    _write_h_series(log, out_dir / "h_series.csv")
    plotting.render_trajectory_figure(log, out_dir / "trajectory.png")
    plotting.render_h_figure(log, out_dir / "h_vs_time.png")
    print(f"wrote trajectory and h series to {out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    _configure_logging()
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "learn":
            return _cmd_learn(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "export-plots":
            return _cmd_export_plots(args)
    except (ParseError, ScenarioError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
