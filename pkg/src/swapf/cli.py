"""Command-line interface.

Subcommands: ``run`` (scenario through the filter, report + figures),
``simulate`` (render and persist a frame stream), ``swdm`` (precompute the
distance-field cache for a map), ``metrics`` (recompute summary metrics
from an exported frames.csv). Exit codes: 0 success, 1 configuration
error, 2 runtime failure. Set SWAPF_THREADS to cap kernel threads.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluate
from .config import (
    config_from_dict,
    load_run_config,
    load_section_file,
    parse_camera,
    parse_sensor,
    parse_trajectory,
    parse_world,
)
from .distance import build_swdm, save_swdm
from .errors import ConfigError, SwapfError
from .raster import load_raster
from .sim import generate_world, run_scenario, save_frames


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swapf",
        description="Semantic-weighted adaptive particle filter toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="drive a scenario through the filter")
    p_run.add_argument("--config", required=True, help="run config YAML")
    p_run.add_argument("--seed", type=int, default=None, help="override master seed")
    p_run.add_argument("--out", default=None, help="override output directory")
    p_run.add_argument("--trials", type=int, default=1,
                       help="independent trials (seeds = master + index)")
    p_run.add_argument("--no-plots", action="store_true",
                       help="skip figure rendering")

    p_sim = sub.add_parser("simulate", help="render a frame stream to disk")
    p_sim.add_argument("--world", required=True,
                       help="world spec YAML or .smr raster path")
    p_sim.add_argument("--trajectory", required=True,
                       help="trajectory YAML (may embed sensor_noise/camera)")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--seed", type=int, default=0)

    p_swdm = sub.add_parser("swdm", help="precompute the distance-field cache")
    p_swdm.add_argument("--map", required=True, help="SMR1 raster path")
    p_swdm.add_argument("--out", required=True, help="cache file to write")

    p_metrics = sub.add_parser("metrics", help="summarize an exported frames.csv")
    p_metrics.add_argument("--report", required=True, help="frames.csv path")
    return parser


def _cmd_run(args) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    out_dir = args.out or config.out_dir
    plots = not args.no_plots

    prepared = evaluate.prepare(config)
    if args.trials <= 1:
        report = evaluate.run(config, prepared=prepared)
        if out_dir:
            evaluate.export_report(report, out_dir, prepared=prepared, plots=plots)
        print(json.dumps(report.to_dict()["summary"], indent=2, default=str))
    else:
        batch = evaluate.run_batch(config, args.trials)
        if out_dir:
            evaluate.export_batch(batch, out_dir, prepared=prepared, plots=plots)
        print(json.dumps(batch.aggregate, indent=2, default=str))
    return 0


def _cmd_simulate(args) -> int:
    world_path = Path(args.world)
    if world_path.suffix == ".smr":
        world = load_raster(world_path)
    else:
        world = generate_world(parse_world(load_section_file(world_path, "world")))

    traj_raw = load_section_file(args.trajectory, "trajectory")
    # allow a combined file with trajectory/sensor_noise/camera sections
    if "waypoints" not in traj_raw:
        raise ConfigError(f"{args.trajectory}: no waypoints found")
    import yaml

    full = yaml.safe_load(Path(args.trajectory).read_text()) or {}
    traj = parse_trajectory(traj_raw)
    sensor = parse_sensor(full.get("sensor_noise", {}))
    cam = parse_camera(full.get("camera", {}))

    frames = run_scenario(world, traj, sensor, cam,
                          seed=np.random.default_rng([args.seed, 1]))
    save_frames(frames, args.out)
    print(f"wrote {len(frames)} frames to {args.out}")
    return 0


def _cmd_swdm(args) -> int:
    raster = load_raster(args.map)
    stack = build_swdm(raster)
    save_swdm(stack, args.out)
    print(f"wrote {stack.class_count}x{stack.height}x{stack.width} "
          f"distance stack to {args.out}")
    return 0


def _cmd_metrics(args) -> int:
    path = Path(args.report)
    if not path.exists():
        raise ConfigError(f"report not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "err_xy_m" not in rows[0]:
        raise ConfigError(f"{path}: not a frames.csv export")
    errors = np.array([float(r["err_xy_m"]) for r in rows])
    post = np.array([bool(int(r.get("post_fit", "1"))) for r in rows])
    out: dict = {"n_frames": len(rows)}
    # map dimension is unknown here; report EMR per 1 km for re-scaling
    for name, mask in (("all", np.ones(len(rows), bool)), ("post_fit", post)):
        if mask.any():
            m = evaluate.compute_metrics(errors[mask], 1000.0)
            out[name] = {
                "n": m.n, "mean_m": m.mean_m, "rmse_m": m.rmse_m,
                "median_m": m.median_m, "recall_at_10_pct": m.recall_at_10_pct,
                "emr_permille_per_km": m.emr_permille,
            }
        else:
            out[name] = "na"
    print(json.dumps(out, indent=2))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "simulate": _cmd_simulate,
        "swdm": _cmd_swdm,
        "metrics": _cmd_metrics,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SwapfError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
