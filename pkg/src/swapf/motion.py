"""4-DoF pose state and the stochastic constant-velocity prediction step.

Velocities are expressed in the map frame by default (x east/columns,
y down-rows, h up); a body-frame option rotates (vx, vy) by the current yaw
before integrating. Yaw noise and yaw rate are in degrees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Pose4:
    """Position (meters), altitude (meters), yaw (degrees in [0, 360))."""

    x: float
    y: float
    h: float
    theta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", float(self.theta) % 360.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.h, self.theta], dtype=np.float64)


@dataclass(frozen=True)
class OdometryInput:
    """Map-frame linear velocity (m/s), yaw rate (deg/s), and time step (s)."""

    vx: float
    vy: float
    vh: float
    omega: float
    dt: float

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be > 0")


@dataclass(frozen=True)
class NoiseParams:
    """Additive Gaussian noise applied once per prediction step."""

    sigma_xy: float = 15.0
    sigma_h: float = 15.0
    sigma_theta: float = 5.0

    def __post_init__(self) -> None:
        if min(self.sigma_xy, self.sigma_h, self.sigma_theta) < 0:
            raise ValueError("noise sigmas must be >= 0")


def predict_all(
    poses: np.ndarray,
    odo: OdometryInput,
    noise: NoiseParams,
    rng: np.random.Generator,
    h_range: tuple[float, float] | None = None,
    body_frame: bool = False,
) -> np.ndarray:
    """Propagate an (N, 4) pose array one step; returns a new array.

    Noise is drawn as four blocks (x, y, h, theta) in a fixed order from the
    supplied generator, so results are reproducible for a given seed
    independent of any surrounding parallelism.
    """
    poses = np.asarray(poses, dtype=np.float64)
    n = poses.shape[0]
    out = np.empty_like(poses)

    if body_frame:
        rad = np.radians(poses[:, 3])
        cos_t, sin_t = np.cos(rad), np.sin(rad)
        vx = odo.vx * cos_t - odo.vy * sin_t
        vy = odo.vx * sin_t + odo.vy * cos_t
    else:
        vx, vy = odo.vx, odo.vy

    out[:, 0] = poses[:, 0] + vx * odo.dt + rng.normal(0.0, noise.sigma_xy, n)
    out[:, 1] = poses[:, 1] + vy * odo.dt + rng.normal(0.0, noise.sigma_xy, n)
    out[:, 2] = poses[:, 2] + odo.vh * odo.dt + rng.normal(0.0, noise.sigma_h, n)
    out[:, 3] = (poses[:, 3] + odo.omega * odo.dt
                 + rng.normal(0.0, noise.sigma_theta, n)) % 360.0
    if h_range is not None:
        np.clip(out[:, 2], h_range[0], h_range[1], out=out[:, 2])
    return out


def predict(
    pose: Pose4,
    odo: OdometryInput,
    noise: NoiseParams,
    rng: np.random.Generator,
    h_range: tuple[float, float] | None = None,
    body_frame: bool = False,
) -> Pose4:
    """Single-pose prediction; same noise model as :func:`predict_all`."""
    arr = predict_all(pose.as_array()[None, :], odo, noise, rng,
                      h_range=h_range, body_frame=body_frame)[0]
    return Pose4(x=arr[0], y=arr[1], h=arr[2], theta=arr[3])
