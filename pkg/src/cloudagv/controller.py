"""Tracking-error detector and the nonlinear feedback control law."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .kinematics import ControlInput, Pose, normalize_angle


class ErrorVec(NamedTuple):
    """Body-frame tracking error: longitudinal, lateral [m] and heading [rad]."""

    x_e: float
    y_e: float
    theta_e: float


@dataclass(frozen=True)
class Gains:
    """Feedback gains of the tracking law.

    ``kx`` [1/s] acts on the longitudinal error; ``ky`` [1/m^2] and ``ktheta``
    [1/m] shape the lateral/heading channel. The defaults put that channel at
    critical damping (ktheta = 2*sqrt(ky)).
    """

    kx: float
    ky: float = 64.0
    ktheta: float = 16.0

    def __post_init__(self):
        for name in ("kx", "ky", "ktheta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"gain {name} must be positive and finite, got {v}")


class ReferencePoint(NamedTuple):
    """One sample of the reference: pose plus feedforward velocities."""

    pose: Pose
    nu_r: float
    omega_r: float


def rotation_to_body(theta_c: float) -> np.ndarray:
    """World-to-body rotation for pose triples, about the heading theta_c."""
    c = math.cos(theta_c)
    s = math.sin(theta_c)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def compute_error(x_r: Pose, x_c: Pose) -> ErrorVec:
    """Reference-minus-actual pose difference rotated into the body frame.

    The heading difference is wrapped before entering the rotation and the
    resulting component is wrapped again, so long runs cannot pick up spurious
    2*pi offsets.
    """
    dx = x_r.x - x_c.x
    dy = x_r.y - x_c.y
    dtheta = normalize_angle(x_r.theta - x_c.theta)
    c = math.cos(x_c.theta)
    s = math.sin(x_c.theta)
    return ErrorVec(c * dx + s * dy, -s * dx + c * dy, normalize_angle(dtheta))


def compute_error_stale(x_r_now: Pose, x_c_stale: Pose) -> ErrorVec:
    """Error as seen by the cloud under uplink outages.

    The current reference is compared against the last successfully received
    plant state; the rotation into the body frame uses that stale heading.
    With zero consecutive outages this is bit-identical to
    :func:`compute_error`.
    """
    return compute_error(x_r_now, x_c_stale)


def control_law(err: ErrorVec, ref: ReferencePoint, gains: Gains) -> ControlInput:
    """Velocity commands from the body-frame error and reference feedforward.

        nu    = nu_r * cos(theta_e) + kx * x_e
        omega = omega_r + nu_r * (ky * y_e + ktheta * sin(theta_e))

    At zero error this returns exactly the feedforward pair (nu_r, omega_r).
    """
    nu = ref.nu_r * math.cos(err.theta_e) + gains.kx * err.x_e
    omega = ref.omega_r + ref.nu_r * (
        gains.ky * err.y_e + gains.ktheta * math.sin(err.theta_e)
    )
    return ControlInput(nu, omega)


def saturate(u: ControlInput, nu_max: Optional[float]) -> ControlInput:
    """Clamp the translational velocity to [-nu_max, nu_max].

    The rotational velocity is never limited. With ``nu_max=None`` this is the
    identity.
    """
    if nu_max is None:
        return u
    if nu_max <= 0.0:
        raise ValueError(f"nu_max must be positive, got {nu_max}")
    return ControlInput(min(max(u.nu, -nu_max), nu_max), u.omega)
