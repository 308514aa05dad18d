"""End-to-end runner and evaluation metrics.

A run drives a scenario (generated or loaded) through the filter frame by
frame, extracts a clustered estimate per frame, and reports accuracy
metrics over the post-convergence window ("fitting" = first frame whose
estimate passes the covariance gate). Pre-convergence frames are reported
separately. Given a seed, everything except wall-clock fields is
deterministic; batch mode derives trial seeds as master_seed + trial_index.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, resolve_alpha
from .distance import DistanceFieldStack, build_cdf, build_swdm, flat_cdf
from .errors import EmptySupport
from .estimate import DbscanParams, PoseEstimate, extract_estimate
from .filtering import (
    CenterSemantic,
    FullSpace,
    InitStrategy,
    Layered,
    initialize,
    step,
)
from .measurement import MeasurementContext, SemanticWeights
from .motion import NoiseParams, Pose4
from .raster import ClassPalette, SemanticRaster, load_raster, resize_nearest
from .sim import DEFAULT_PALETTE, ObservationFrame, generate_world, run_scenario
from .state import ParticleSet, StateBounds

RECALL_THRESHOLD_M = 10.0


@dataclass(frozen=True)
class MetricSummary:
    """Accuracy metrics over one window of per-frame errors."""

    n: int
    mean_m: float
    rmse_m: float
    median_m: float
    recall_at_10_pct: float
    emr_permille: float


@dataclass(frozen=True)
class FrameRecord:
    frame: int
    t: float
    gt: tuple[float, float, float, float]
    est: tuple[float, float, float, float]
    err_xy_m: float
    err_3d_m: float
    err_h_m: float
    err_px: float
    converged: bool
    post_fit: bool
    cluster_size: int
    n_outliers: int
    n_clusters: int
    cov_trace_pos: float
    ess: float
    weight_sum_dev: float
    min_raw_weight: float
    wall_ms: float


@dataclass(frozen=True)
class RunSummary:
    n_frames: int
    converged_ever: bool
    fitting_frame: int | None
    fitting_time_s: float | None
    finish_time_s: float
    post: MetricSummary | None
    pre: MetricSummary | None
    median_err_h_post_m: float | None
    median_err_3d_post_m: float | None
    mean_cov_trace_post: float | None


@dataclass(frozen=True)
class RunReport:
    seed: int
    map_dim_m: float
    frames: list[FrameRecord]
    summary: RunSummary

    def to_dict(self, include_timing: bool = True) -> dict:
        data = {
            "seed": self.seed,
            "map_dim_m": self.map_dim_m,
            "frames": [asdict(f) for f in self.frames],
            "summary": asdict(self.summary),
        }
        if not include_timing:
            for f in data["frames"]:
                f.pop("wall_ms")
            data["summary"].pop("fitting_time_s")
            data["summary"].pop("finish_time_s")
        return data


@dataclass(frozen=True)
class BatchReport:
    trials: list[RunReport]
    aggregate: dict

    def to_dict(self) -> dict:
        return {
            "aggregate": self.aggregate,
            "trials": [t.to_dict() for t in self.trials],
        }


def compute_metrics(errors: np.ndarray, map_dim_m: float) -> MetricSummary:
    """RMSE, lower-interpolated median, Recall@10 (strict < 10 m), and the
    error-to-map ratio in per-mille."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("need at least one error value")
    mean = float(np.mean(errors))
    return MetricSummary(
        n=int(errors.size),
        mean_m=mean,
        rmse_m=float(np.sqrt(np.mean(errors**2))),
        median_m=float(np.percentile(errors, 50, method="lower")),
        recall_at_10_pct=100.0 * float(np.sum(errors < RECALL_THRESHOLD_M))
        / errors.size,
        emr_permille=1000.0 * mean / map_dim_m,
    )


@dataclass
class PreparedRun:
    """Map-side objects shared by every trial of a batch."""

    world: SemanticRaster
    filter_map: SemanticRaster
    swdm: DistanceFieldStack
    ctx: MeasurementContext
    palette: ClassPalette | None
    bounds: StateBounds
    noise: NoiseParams
    dbscan: DbscanParams


def prepare(config: RunConfig, swdm: DistanceFieldStack | None = None) -> PreparedRun:
    """Build the world, the (optionally downsampled) filter map, and the
    immutable measurement context."""
    if config.world is not None:
        world = generate_world(config.world)
        palette: ClassPalette | None = DEFAULT_PALETTE
    else:
        world = load_raster(config.map_path)
        world.validate_labels()
        palette = DEFAULT_PALETTE if world.class_count == DEFAULT_PALETTE.class_count else None

    if config.map_scale > 1:
        filter_map = resize_nearest(world, world.width // config.map_scale)
    else:
        filter_map = world

    fp = config.filter
    alpha = resolve_alpha(fp.alpha, filter_map.class_count, palette)
    weights = SemanticWeights(alpha=alpha, gamma=fp.gamma, d0=fp.d0)
    cdf = (build_cdf(config.camera.view_side, fp.cdf_profile) if fp.use_cdf
           else flat_cdf(config.camera.view_side))
    if swdm is None:
        swdm = build_swdm(filter_map)
    ctx = MeasurementContext(
        map_raster=filter_map, swdm=swdm, cdf=cdf, weights=weights,
        cam=config.camera, bin_count=fp.rotation_bins,
    )
    return PreparedRun(
        world=world,
        filter_map=filter_map,
        swdm=swdm,
        ctx=ctx,
        palette=palette,
        bounds=StateBounds.from_map(filter_map, fp.h_bounds),
        noise=NoiseParams(sigma_xy=fp.sigma_xy, sigma_h=fp.sigma_h,
                          sigma_theta=fp.sigma_theta),
        dbscan=DbscanParams(eps=fp.dbscan_eps, min_pts=fp.dbscan_min_pts),
    )


def _resolve_strategy(
    config: RunConfig,
    prepared: PreparedRun,
    first_obs: SemanticRaster,
) -> InitStrategy:
    fp = config.filter
    if fp.init == "full_space":
        return FullSpace()
    if fp.init == "layered":
        return Layered(layer_heights=fp.layer_heights)
    if fp.center_class == "auto":
        c = first_obs.width // 2
        class_id = int(first_obs.labels[c, c])
        if class_id >= first_obs.class_count:  # view center off-map: no prior
            return FullSpace()
    elif isinstance(fp.center_class, str):
        if prepared.palette is None:
            raise EmptySupport("center_semantic by name needs a palette")
        class_id = prepared.palette.id_of(fp.center_class)
    else:
        class_id = int(fp.center_class)
    return CenterSemantic(center_class=class_id)


def run(
    config: RunConfig,
    prepared: PreparedRun | None = None,
    frames: list[ObservationFrame] | None = None,
) -> RunReport:
    """Execute one seeded trial; ``prepared``/``frames`` allow reuse across
    trials that share a world or a recorded frame stream."""
    t_start = time.perf_counter()
    if prepared is None:
        prepared = prepare(config)
    if frames is None:
        sensor_rng = np.random.default_rng([config.seed, 1])
        frames = run_scenario(prepared.world, config.trajectory, config.sensor,
                              config.camera, seed=sensor_rng)
    fp = config.filter

    strategy = _resolve_strategy(config, prepared, frames[0].obs)
    try:
        particles = initialize(fp.n_particles, prepared.bounds, strategy,
                               seed=config.seed, map_raster=prepared.filter_map)
    except EmptySupport:
        particles = initialize(fp.n_particles, prepared.bounds, FullSpace(),
                               seed=config.seed, map_raster=prepared.filter_map)

    records: list[FrameRecord] = []
    fitting_frame: int | None = None
    fitting_time: float | None = None
    mpp = prepared.filter_map.meters_per_pixel

    for k, frame in enumerate(frames):
        t0 = time.perf_counter()
        particles, raw = step(
            particles, frame.obs, frame.odo, prepared.ctx, prepared.noise,
            prepared.bounds, ess_threshold_fraction=fp.ess_fraction,
            body_frame=fp.body_frame,
        )
        est = extract_estimate(particles, prepared.dbscan, fp.cov_threshold)
        wall_ms = (time.perf_counter() - t0) * 1e3

        if est.converged and fitting_frame is None:
            fitting_frame = k
            fitting_time = time.perf_counter() - t_start

        gt = frame.gt
        dx, dy, dh = est.mean.x - gt.x, est.mean.y - gt.y, est.mean.h - gt.h
        err_xy = math.hypot(dx, dy)
        records.append(
            FrameRecord(
                frame=k,
                t=frame.t,
                gt=(gt.x, gt.y, gt.h, gt.theta),
                est=(est.mean.x, est.mean.y, est.mean.h, est.mean.theta),
                err_xy_m=err_xy,
                err_3d_m=math.sqrt(dx * dx + dy * dy + dh * dh),
                err_h_m=abs(dh),
                err_px=err_xy / mpp,
                converged=est.converged,
                post_fit=fitting_frame is not None,
                cluster_size=est.cluster_size,
                n_outliers=est.n_outliers,
                n_clusters=est.n_clusters,
                cov_trace_pos=est.global_cov_trace,
                ess=particles.effective_sample_size(),
                weight_sum_dev=abs(float(np.sum(particles.weights)) - 1.0),
                min_raw_weight=float(np.min(raw)),
                wall_ms=wall_ms,
            )
        )

    finish_time = time.perf_counter() - t_start
    map_dim_m = max(prepared.filter_map.width, prepared.filter_map.height) * mpp

    post = [r for r in records if r.post_fit]
    pre = [r for r in records if not r.post_fit]
    post_metrics = (
        compute_metrics(np.array([r.err_xy_m for r in post]), map_dim_m)
        if post else None
    )
    pre_metrics = (
        compute_metrics(np.array([r.err_xy_m for r in pre]), map_dim_m)
        if pre else None
    )
    summary = RunSummary(
        n_frames=len(records),
        converged_ever=fitting_frame is not None,
        fitting_frame=fitting_frame,
        fitting_time_s=fitting_time,
        finish_time_s=finish_time,
        post=post_metrics,
        pre=pre_metrics,
        median_err_h_post_m=(
            float(np.median([r.err_h_m for r in post])) if post else None
        ),
        median_err_3d_post_m=(
            float(np.median([r.err_3d_m for r in post])) if post else None
        ),
        mean_cov_trace_post=(
            float(np.mean([r.cov_trace_pos for r in post])) if post else None
        ),
    )
    return RunReport(seed=config.seed, map_dim_m=map_dim_m, frames=records,
                     summary=summary)


def run_batch(config: RunConfig, n_trials: int) -> BatchReport:
    """Independent seeded trials over a shared world: trial seed =
    master seed + trial index."""
    prepared = prepare(config)
    trials = []
    for trial in range(n_trials):
        trial_config = config.with_seed(config.seed + trial)
        trials.append(run(trial_config, prepared=prepared))
    return BatchReport(trials=trials, aggregate=_aggregate(trials))


def _aggregate(trials: list[RunReport]) -> dict:
    converged = [t for t in trials if t.summary.converged_ever]
    post_medians = [t.summary.post.median_m for t in converged if t.summary.post]
    post_recalls = [t.summary.post.recall_at_10_pct for t in converged if t.summary.post]
    agg: dict = {
        "n_trials": len(trials),
        "n_converged": len(converged),
        "convergence_rate_pct": 100.0 * len(converged) / len(trials) if trials else 0.0,
        "mean_fitting_frame": (
            float(np.mean([t.summary.fitting_frame for t in converged]))
            if converged else None
        ),
    }
    if post_medians:
        agg["mean_post_median_m"] = float(np.mean(post_medians))
        agg["best_post_median_m"] = float(np.min(post_medians))
        agg["mean_post_recall_pct"] = float(np.mean(post_recalls))
        agg["best_post_recall_pct"] = float(np.max(post_recalls))
    return agg


def _na(value) -> str:
    return "na" if value is None else repr(value)


def export_report(
    report: RunReport,
    out_dir: str | Path,
    prepared: PreparedRun | None = None,
    plots: bool = True,
) -> list[Path]:
    """Write summary.json, frames.csv, trajectory.csv, and (by default) the
    rendered figures. Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    summary_path = out / "summary.json"
    data = report.to_dict()
    data.pop("frames")  # per-frame data lives in frames.csv
    summary_path.write_text(json.dumps(data, indent=2, default=str))
    written.append(summary_path)

    frames_path = out / "frames.csv"
    with open(frames_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["frame", "t", "gt_x", "gt_y", "gt_h", "gt_theta",
             "est_x", "est_y", "est_h", "est_theta",
             "err_xy_m", "err_3d_m", "err_h_m", "err_px",
             "converged", "post_fit", "cluster_size", "n_outliers",
             "n_clusters", "cov_trace_pos", "ess", "wall_ms"]
        )
        for r in report.frames:
            writer.writerow(
                [r.frame, r.t, *r.gt, *r.est, r.err_xy_m, r.err_3d_m,
                 r.err_h_m, r.err_px, int(r.converged), int(r.post_fit),
                 r.cluster_size, r.n_outliers, r.n_clusters,
                 r.cov_trace_pos, r.ess, r.wall_ms]
            )
    written.append(frames_path)

    traj_path = out / "trajectory.csv"
    with open(traj_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "gt_x", "gt_y", "gt_h", "gt_theta",
                         "est_x", "est_y", "est_h", "est_theta"])
        for r in report.frames:
            writer.writerow([r.t, *r.gt, *r.est])
    written.append(traj_path)

    if plots:
        from . import plotting

        world = prepared.world if prepared is not None else None
        palette = prepared.palette if prepared is not None else None
        written.extend(plotting.save_report_figures(report, out, world=world,
                                                    palette=palette))
    return written


def export_batch(batch: BatchReport, out_dir: str | Path,
                 prepared: PreparedRun | None = None, plots: bool = True) -> list[Path]:
    """Per-trial exports plus a batch table with per-trial and aggregate rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for k, trial in enumerate(batch.trials):
        written.extend(
            export_report(trial, out / f"trial_{k:02d}", prepared=prepared,
                          plots=plots)
        )

    table = out / "batch_summary.csv"
    fields = ["trial", "seed", "converged", "fitting_frame", "fitting_time_s",
              "finish_time_s", "post_rmse_m", "post_median_m",
              "post_recall_at_10_pct", "post_emr_permille"]
    with open(table, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        medians, rmses, recalls, emrs = [], [], [], []
        for k, trial in enumerate(batch.trials):
            s = trial.summary
            post = s.post
            writer.writerow([
                k, trial.seed, int(s.converged_ever), _na(s.fitting_frame),
                _na(s.fitting_time_s), s.finish_time_s,
                _na(post.rmse_m if post else None),
                _na(post.median_m if post else None),
                _na(post.recall_at_10_pct if post else None),
                _na(post.emr_permille if post else None),
            ])
            if post:
                medians.append(post.median_m)
                rmses.append(post.rmse_m)
                recalls.append(post.recall_at_10_pct)
                emrs.append(post.emr_permille)
        if medians:
            writer.writerow(["mean", "", "", "", "", "",
                             float(np.mean(rmses)), float(np.mean(medians)),
                             float(np.mean(recalls)), float(np.mean(emrs))])
            writer.writerow(["best", "", "", "", "", "",
                             float(np.min(rmses)), float(np.min(medians)),
                             float(np.max(recalls)), float(np.min(emrs))])
    written.append(table)

    agg_path = out / "batch_summary.json"
    agg_path.write_text(json.dumps(batch.aggregate, indent=2, default=str))
    written.append(agg_path)
    return written
