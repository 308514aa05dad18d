"""Report figures rendered to files beside the CSV output.

Headless-safe: the Agg backend is selected before pyplot is imported, so
figures render identically with or without a display.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .raster import ClassPalette, SemanticRaster

_GT_STYLE = dict(color="black", lw=1.4, label="ground truth")
_EST_STYLE = dict(color="tab:red", lw=1.0, ls="--", label="estimate")


def _world_image(world: SemanticRaster, palette: ClassPalette | None) -> np.ndarray:
    if palette is None or palette.class_count < world.class_count:
        levels = (world.labels.astype(np.float64) / max(1, world.class_count)) * 255
        return np.repeat(levels[:, :, None], 3, axis=2).astype(np.uint8)
    table = np.zeros((world.class_count + 1, 3), dtype=np.uint8)
    table[: palette.class_count] = np.array(palette.colors, dtype=np.uint8)
    return table[world.labels]


def trajectory_figure(report, world=None, palette=None):
    """Top-down ground-truth vs estimated path, optionally over the map."""
    fig, ax = plt.subplots(figsize=(7, 7))
    if world is not None:
        mpp = world.meters_per_pixel or 1.0
        ax.imshow(
            _world_image(world, palette),
            extent=(0, world.width * mpp, world.height * mpp, 0),
            interpolation="nearest",
        )
    gt = np.array([r.gt[:2] for r in report.frames])
    est = np.array([r.est[:2] for r in report.frames])
    ax.plot(gt[:, 0], gt[:, 1], **_GT_STYLE)
    ax.plot(est[:, 0], est[:, 1], **_EST_STYLE)
    ax.plot(gt[0, 0], gt[0, 1], "r*", ms=12, label="start")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if world is None:
        ax.invert_yaxis()  # match image coordinates (y down)
    ax.legend(loc="upper right")
    ax.set_title("trajectory (top view)")
    fig.tight_layout()
    return fig


def error_figure(report):
    """Horizontal error per frame with the convergence frame marked."""
    fig, ax = plt.subplots(figsize=(7, 3.2))
    frames = [r.frame for r in report.frames]
    ax.plot(frames, [r.err_xy_m for r in report.frames], color="tab:blue",
            lw=1.2, label="horizontal error")
    ax.axhline(10.0, color="gray", lw=0.8, ls=":", label="10 m")
    if report.summary.fitting_frame is not None:
        ax.axvline(report.summary.fitting_frame, color="tab:green", lw=0.8,
                   ls="--", label="first convergence")
    ax.set_xlabel("frame")
    ax.set_ylabel("error [m]")
    ax.set_yscale("log")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    return fig


def altitude_figure(report):
    fig, ax = plt.subplots(figsize=(7, 3.2))
    frames = [r.frame for r in report.frames]
    ax.plot(frames, [r.gt[2] for r in report.frames], **_GT_STYLE)
    ax.plot(frames, [r.est[2] for r in report.frames], **_EST_STYLE)
    ax.set_xlabel("frame")
    ax.set_ylabel("altitude [m]")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def path3d_figure(report):
    """3D path colored by horizontal error."""
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(projection="3d")
    gt = np.array([r.gt[:3] for r in report.frames])
    est = np.array([r.est[:3] for r in report.frames])
    err = np.array([r.err_xy_m for r in report.frames])
    ax.plot(gt[:, 0], gt[:, 1], gt[:, 2], color="black", lw=1.2,
            label="ground truth")
    pts = ax.scatter(est[:, 0], est[:, 1], est[:, 2], c=err, cmap="viridis",
                     s=12, label="estimate")
    ax.scatter(*gt[0], color="red", marker="*", s=80)
    fig.colorbar(pts, ax=ax, shrink=0.6, label="error [m]")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_zlabel("h [m]")
    ax.legend(loc="upper right", fontsize=8)
    return fig


def save_report_figures(report, out_dir, world=None, palette=None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, fig in (
        ("trajectory.png", trajectory_figure(report, world, palette)),
        ("error.png", error_figure(report)),
        ("altitude.png", altitude_figure(report)),
        ("path3d.png", path3d_figure(report)),
    ):
        path = out / name
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)
    return written
