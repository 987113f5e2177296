"""Unicycle kinematics: the continuous plant and its explicit-Euler step."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi

# World positions beyond this bound are treated as a diverged run, not physics.
POSITION_LIMIT = 1.0e6


class DivergenceError(RuntimeError):
    """Raised when the plant state stops being a usable number."""


class Pose(NamedTuple):
    """Planar pose: position in meters, heading in radians wrapped to (-pi, pi]."""

    x: float
    y: float
    theta: float


class ControlInput(NamedTuple):
    """Translational velocity nu [m/s] and rotational velocity omega [rad/s]."""

    nu: float
    omega: float


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]; in-range values pass through untouched."""
    if -math.pi < theta <= math.pi:
        return theta
    r = math.fmod(theta + math.pi, TWO_PI)
    if r <= 0.0:
        r += TWO_PI
    return r - math.pi


def normalize_angle_array(theta: np.ndarray) -> np.ndarray:
    """Vectorized wrap to (-pi, pi], same convention as :func:`normalize_angle`."""
    theta = np.asarray(theta, dtype=float)
    r = np.mod(theta + np.pi, TWO_PI)
    r = np.where(r <= 0.0, r + TWO_PI, r) - np.pi
    return np.where((theta > -np.pi) & (theta <= np.pi), theta, r)


def motion_jacobian(pose: Pose) -> np.ndarray:
    """3x2 map from (nu, omega) to world-frame pose rates at the given heading."""
    return np.array(
        [
            [math.cos(pose.theta), 0.0],
            [math.sin(pose.theta), 0.0],
            [0.0, 1.0],
        ]
    )


def step_euler(pose: Pose, u: ControlInput, ts: float) -> Pose:
    """Advance the pose one sampling interval under a held control input.

    The input is held constant over ``ts`` (zero-order hold) and the pose moves
    along the instantaneous heading; the heading is re-wrapped afterwards.
    Raises :class:`DivergenceError` if the result is not finite.
    """
    if ts <= 0.0:
        raise ValueError(f"ts must be positive, got {ts}")
    x = pose.x + ts * u.nu * math.cos(pose.theta)
    y = pose.y + ts * u.nu * math.sin(pose.theta)
    theta = pose.theta + ts * u.omega
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(theta)):
        raise DivergenceError(
            f"non-finite state after step: x={x}, y={y}, theta={theta} "
            f"(from {pose}, u={u}, ts={ts})"
        )
    return Pose(x, y, normalize_angle(theta))


def step_fine(pose: Pose, u: ControlInput, ts: float, substeps: int) -> Pose:
    """Reference integrator: ``substeps`` Euler sub-steps under the same held input.

    Converges to the exact zero-order-hold solution as ``substeps`` grows; used
    by tests to measure the discretization error of the single-step update.
    """
    if substeps < 1:
        raise ValueError(f"substeps must be >= 1, got {substeps}")
    h = ts / substeps
    p = pose
    for _ in range(substeps):
        p = step_euler(p, u, h)
    return p


def check_position_bounds(pose: Pose) -> None:
    """Abort guard used by the simulation loop."""
    if abs(pose.x) > POSITION_LIMIT or abs(pose.y) > POSITION_LIMIT:
        raise DivergenceError(
            f"position outside +/-{POSITION_LIMIT:g} m: x={pose.x:g}, y={pose.y:g}"
        )
