"""Pose extraction from the posterior: DBSCAN outlier rejection, weight-based
cluster selection, circular-mean yaw, and the covariance convergence gate.

DBSCAN semantics (pinned so results are exactly reproducible):

* a point is core when its eps-ball contains >= min_pts points, itself
  included (distances compared as ``d^2 <= eps^2``);
* clusters are the density-connected components of core points, numbered
  by the original index of their first core member;
* border points join the lowest-numbered reachable cluster; everything
  else is NOISE (-1).

Clustering runs in (x, y, h) only; yaw never affects membership. The
implementation hashes points into a uniform grid of cell side eps/sqrt(3)
(so same-cell points are always neighbors) and is exact, not approximate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .errors import ZeroResultant
from .motion import Pose4
from .state import ParticleSet

NOISE = -1


@dataclass(frozen=True)
class DbscanParams:
    """Neighborhood radius (meters, in (x, y, h) space) and core threshold."""

    eps: float = 30.0
    min_pts: int = 50

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")


@dataclass(frozen=True)
class PoseEstimate:
    """Clustered filter output and its diagnostics.

    ``covariance`` describes the winning cluster; the convergence gate
    monitors ``global_cov_trace``, the weighted positional covariance trace
    of the whole posterior, so a multi-hypothesis posterior never reads as
    converged no matter how tight each hypothesis is.
    """

    mean: Pose4
    covariance: np.ndarray  # 4x4 over (x, y, h, theta), theta circular
    converged: bool
    cluster_size: int
    n_outliers: int
    n_clusters: int
    cluster_id: int
    global_cov_trace: float = 0.0
    yaw_degenerate: bool = False


@njit(cache=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit(cache=True)
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra == rb:
        return
    if ra < rb:
        parent[rb] = ra
    else:
        parent[ra] = rb


@njit(cache=True, inline="always")
def _lower_bound(arr, v):
    lo = 0
    hi = arr.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, inline="always")
def _cell_slot(grid, nx, ny, nz, ucell_keys, ux, uy, uz, n_uy, n_uz,
               cx, cy, cz):
    # index into the occupied-cell table, or -1 when the cell is empty.
    # grid mode: O(1) dense lookup; otherwise binary search on rank keys.
    if nx > 0:
        if cx < 0 or cx >= nx or cy < 0 or cy >= ny or cz < 0 or cz >= nz:
            return -1
        return grid[(cx * ny + cy) * nz + cz]
    ix = _lower_bound(ux, cx)
    if ix >= ux.shape[0] or ux[ix] != cx:
        return -1
    iy = _lower_bound(uy, cy)
    if iy >= uy.shape[0] or uy[iy] != cy:
        return -1
    iz = _lower_bound(uz, cz)
    if iz >= uz.shape[0] or uz[iz] != cz:
        return -1
    key = (ix * n_uy + iy) * n_uz + iz
    c = _lower_bound(ucell_keys, key)
    if c >= ucell_keys.shape[0] or ucell_keys[c] != key:
        return -1
    return c


@njit(parallel=True, cache=True)
def _dbscan_kernel(points, cells, cell_ids, ucell_keys, ucell_start, order,
                   ux, uy, uz, eps2, min_pts, grid, nx, ny, nz):
    n = points.shape[0]
    n_uy = uy.shape[0]
    n_uz = uz.shape[0]

    core = np.zeros(n, dtype=np.bool_)
    for i in prange(n):
        own = cell_ids[i]
        if ucell_start[own + 1] - ucell_start[own] >= min_pts:
            core[i] = True  # cell diameter <= eps: every member is a neighbor
            continue
        count = 0
        done = False
        for dx in range(-2, 3):
            if done:
                break
            for dy in range(-2, 3):
                if done:
                    break
                for dz in range(-2, 3):
                    c = _cell_slot(grid, nx, ny, nz, ucell_keys, ux, uy,
                                   uz, n_uy, n_uz, cells[i, 0] + dx,
                                   cells[i, 1] + dy, cells[i, 2] + dz)
                    if c < 0:
                        continue
                    for k in range(ucell_start[c], ucell_start[c + 1]):
                        j = order[k]
                        d2 = ((points[i, 0] - points[j, 0]) ** 2
                              + (points[i, 1] - points[j, 1]) ** 2
                              + (points[i, 2] - points[j, 2]) ** 2)
                        if d2 <= eps2:
                            count += 1
                            if count >= min_pts:
                                core[i] = True
                                done = True
                                break

    # density-connect the cores (serial: union-find is order-insensitive)
    parent = np.arange(n, dtype=np.int64)
    for i in range(n):
        if not core[i]:
            continue
        for dx in range(-2, 3):
            for dy in range(-2, 3):
                for dz in range(-2, 3):
                    c = _cell_slot(grid, nx, ny, nz, ucell_keys, ux, uy,
                                   uz, n_uy, n_uz, cells[i, 0] + dx,
                                   cells[i, 1] + dy, cells[i, 2] + dz)
                    if c < 0:
                        continue
                    # the first in-reach core suffices: same-cell cores are
                    # always mutually connected, so transitivity covers the rest
                    for k in range(ucell_start[c], ucell_start[c + 1]):
                        j = order[k]
                        if j != i and core[j]:
                            d2 = ((points[i, 0] - points[j, 0]) ** 2
                                  + (points[i, 1] - points[j, 1]) ** 2
                                  + (points[i, 2] - points[j, 2]) ** 2)
                            if d2 <= eps2:
                                _union(parent, i, j)
                                break

    labels = np.full(n, -1, dtype=np.int64)
    root_label = np.full(n, -1, dtype=np.int64)
    next_label = 0
    for i in range(n):
        if core[i]:
            r = _find(parent, i)
            if root_label[r] < 0:
                root_label[r] = next_label
                next_label += 1
            labels[i] = root_label[r]

    for i in prange(n):
        if core[i]:
            continue
        best = np.int64(2**62)
        for dx in range(-2, 3):
            for dy in range(-2, 3):
                for dz in range(-2, 3):
                    c = _cell_slot(grid, nx, ny, nz, ucell_keys, ux, uy,
                                   uz, n_uy, n_uz, cells[i, 0] + dx,
                                   cells[i, 1] + dy, cells[i, 2] + dz)
                    if c < 0:
                        continue
                    for k in range(ucell_start[c], ucell_start[c + 1]):
                        j = order[k]
                        if core[j] and labels[j] < best:
                            d2 = ((points[i, 0] - points[j, 0]) ** 2
                                  + (points[i, 1] - points[j, 1]) ** 2
                                  + (points[i, 2] - points[j, 2]) ** 2)
                            if d2 <= eps2:
                                best = labels[j]
        if best < 2**62:
            labels[i] = best

    return core, labels


def dbscan(points: np.ndarray, params: DbscanParams) -> np.ndarray:
    """Cluster labels per point; NOISE (-1) marks outliers."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3 or points.shape[0] < 1:
        raise ValueError("points must be a non-empty (N, 3) array")
    g = params.eps / math.sqrt(3.0)
    cells = np.floor(points / g).astype(np.int64)
    cells -= cells.min(axis=0)

    spans = cells.max(axis=0) + 1
    n = points.shape[0]
    use_grid = int(np.prod(spans)) <= max(64 * n, 1 << 20)
    if use_grid:
        nx, ny, nz = (int(s) for s in spans)
        keys = (cells[:, 0] * ny + cells[:, 1]) * nz + cells[:, 2]
        ux = uy = uz = np.empty(0, dtype=np.int64)
    else:
        nx = ny = nz = 0
        ux = np.unique(cells[:, 0])
        uy = np.unique(cells[:, 1])
        uz = np.unique(cells[:, 2])
        rx = np.searchsorted(ux, cells[:, 0])
        ry = np.searchsorted(uy, cells[:, 1])
        rz = np.searchsorted(uz, cells[:, 2])
        keys = (rx * uy.shape[0] + ry) * uz.shape[0] + rz

    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    boundaries = np.flatnonzero(np.diff(sorted_keys)) + 1
    ucell_start = np.concatenate(([0], boundaries, [keys.shape[0]])).astype(np.int64)
    ucell_keys = sorted_keys[ucell_start[:-1]]
    cell_ids = np.searchsorted(ucell_keys, keys)

    if use_grid:
        grid = np.full(nx * ny * nz, -1, dtype=np.int64)
        grid[ucell_keys] = np.arange(ucell_keys.shape[0])
    else:
        grid = np.empty(0, dtype=np.int64)

    _, labels = _dbscan_kernel(
        points, cells, cell_ids.astype(np.int64), ucell_keys,
        ucell_start, order.astype(np.int64), ux, uy, uz,
        float(params.eps) ** 2, np.int64(params.min_pts),
        grid, np.int64(nx), np.int64(ny), np.int64(nz),
    )
    return labels


def circular_mean(angles_deg: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Weighted circular mean in degrees, mapped to [0, 360).

    Raises ZeroResultant when the weighted resultant is numerically zero
    (antipodal mass), signalling a meaningless yaw estimate.
    """
    angles = np.asarray(angles_deg, dtype=np.float64)
    if weights is None:
        weights = np.full(angles.shape, 1.0 / angles.size)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        total = weights.sum()
        if total <= 0:
            raise ValueError("weights must have positive sum")
        weights = weights / total
    rad = np.radians(angles)
    s = float(np.sum(weights * np.sin(rad)))
    c = float(np.sum(weights * np.cos(rad)))
    if math.hypot(s, c) < 1e-12:
        raise ZeroResultant("circular mean undefined: resultant ~ 0")
    return math.degrees(math.atan2(s, c)) % 360.0


def _wrapped_residuals(angles_deg: np.ndarray, mean_deg: float) -> np.ndarray:
    return (angles_deg - mean_deg + 180.0) % 360.0 - 180.0


def extract_estimate(
    particles: ParticleSet,
    params: DbscanParams,
    cov_threshold: float = 100.0,
) -> PoseEstimate:
    """Centroid of the heaviest cluster with a covariance convergence gate.

    The winning cluster is the one with the greatest total posterior weight
    (ties break toward the lower cluster id). The gate compares the whole
    posterior's weighted positional covariance trace against
    ``cov_threshold``. When every point is noise the estimate falls back to
    the global weighted mean with converged=False.
    """
    poses = particles.poses
    weights = particles.weights
    labels = dbscan(poses[:, :3], params)
    n_outliers = int(np.sum(labels == NOISE))
    n_clusters = int(labels.max()) + 1 if labels.max() >= 0 else 0

    if n_clusters == 0:
        member_mask = np.ones(particles.n, dtype=bool)
        cluster_id = NOISE
        cluster_size = 0
    else:
        totals = np.bincount(
            labels[labels >= 0], weights=weights[labels >= 0], minlength=n_clusters
        )
        cluster_id = int(np.argmax(totals))
        member_mask = labels == cluster_id
        cluster_size = int(np.sum(member_mask))

    w = weights[member_mask]
    total = float(w.sum())
    if total <= 0:
        w = np.full(w.shape, 1.0 / w.size)
    else:
        w = w / total

    member = poses[member_mask]
    mean_xyh = w @ member[:, :3]
    yaw_degenerate = False
    try:
        mean_theta = circular_mean(member[:, 3], w)
    except ZeroResultant:
        yaw_degenerate = True
        mean_theta = float(member[np.argmax(w), 3])

    residuals = np.empty_like(member)
    residuals[:, :3] = member[:, :3] - mean_xyh
    residuals[:, 3] = _wrapped_residuals(member[:, 3], mean_theta)
    cov = (residuals * w[:, None]).T @ residuals

    global_mean = weights @ poses[:, :3]
    global_resid = poses[:, :3] - global_mean
    global_trace = float(np.sum(weights[:, None] * global_resid**2))
    converged = n_clusters > 0 and global_trace < cov_threshold

    return PoseEstimate(
        mean=Pose4(x=float(mean_xyh[0]), y=float(mean_xyh[1]),
                   h=float(mean_xyh[2]), theta=mean_theta),
        covariance=cov,
        converged=converged,
        cluster_size=cluster_size,
        n_outliers=n_outliers,
        n_clusters=n_clusters,
        cluster_id=cluster_id,
        global_cov_trace=global_trace,
        yaw_degenerate=yaw_degenerate,
    )
