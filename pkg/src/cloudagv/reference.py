"""Reference-track generation for parametric track families.

Tracks are arc-length parametrized chains of straight and circular-arc
segments, evaluated in closed form and sampled once per timestep, so the
reference itself carries no integration error. The heading is tangent to the
path and the rotational feedforward follows the local curvature:
omega_r = curvature * nu_r.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .controller import ReferencePoint
from .kinematics import Pose, normalize_angle, normalize_angle_array


class TrackSpecError(ValueError):
    """The requested track cannot be realized."""


def _positive(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0.0):
        raise TrackSpecError(f"{name} must be positive and finite, got {value}")


@dataclass(frozen=True)
class Line:
    """Straight segment of the given length, along the start heading."""

    length: float
    closed = False

    def __post_init__(self):
        _positive("line length", self.length)

    def segments(self) -> List[Tuple[float, float]]:
        return [(self.length, 0.0)]


@dataclass(frozen=True)
class CircleLoop:
    """Full circle of the given radius; direction 'ccw' or 'cw'."""

    radius: float
    direction: str = "ccw"
    closed = True

    def __post_init__(self):
        _positive("circle radius", self.radius)
        if self.direction not in ("ccw", "cw"):
            raise TrackSpecError(f"circle direction must be 'ccw' or 'cw', got {self.direction!r}")

    def segments(self) -> List[Tuple[float, float]]:
        sign = 1.0 if self.direction == "ccw" else -1.0
        return [(2.0 * math.pi * self.radius, sign / self.radius)]


@dataclass(frozen=True)
class SCurve:
    """Straight / arc / straight / arc chain plus an optional straight tail.

    Arc angles are signed radians (positive turns left); each arc needs a
    positive radius. Zero-length pieces are dropped.
    """

    straight1: float
    radius1: float
    arc1: float
    straight2: float
    radius2: float
    arc2: float
    straight3: float = 0.0
    closed = False

    def __post_init__(self):
        for name in ("straight1", "straight2", "straight3"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise TrackSpecError(f"{name} must be >= 0 and finite, got {v}")
        for name, radius, arc in (
            ("arc1", self.radius1, self.arc1),
            ("arc2", self.radius2, self.arc2),
        ):
            if arc != 0.0:
                _positive(f"radius for {name}", radius)
            if not math.isfinite(arc):
                raise TrackSpecError(f"{name} must be finite, got {arc}")
        if (
            self.straight1 + self.straight2 + self.straight3 == 0.0
            and self.arc1 == 0.0
            and self.arc2 == 0.0
        ):
            raise TrackSpecError("s-curve has zero total length")

    def segments(self) -> List[Tuple[float, float]]:
        segs = []
        if self.straight1 > 0.0:
            segs.append((self.straight1, 0.0))
        if self.arc1 != 0.0:
            segs.append((abs(self.arc1) * self.radius1, math.copysign(1.0, self.arc1) / self.radius1))
        if self.straight2 > 0.0:
            segs.append((self.straight2, 0.0))
        if self.arc2 != 0.0:
            segs.append((abs(self.arc2) * self.radius2, math.copysign(1.0, self.arc2) / self.radius2))
        if self.straight3 > 0.0:
            segs.append((self.straight3, 0.0))
        if not segs:
            raise TrackSpecError("s-curve has zero total length")
        return segs


@dataclass(frozen=True)
class RoundedRectangle:
    """Counter-clockwise rectangle loop with quarter-circle corners."""

    width: float
    height: float
    corner_radius: float
    closed = True

    def __post_init__(self):
        _positive("width", self.width)
        _positive("height", self.height)
        _positive("corner_radius", self.corner_radius)
        if 2.0 * self.corner_radius > min(self.width, self.height):
            raise TrackSpecError("corner radius too large for the rectangle sides")

    def segments(self) -> List[Tuple[float, float]]:
        r = self.corner_radius
        quarter = 0.5 * math.pi * r
        kappa = 1.0 / r
        w = self.width - 2.0 * r
        h = self.height - 2.0 * r
        segs: List[Tuple[float, float]] = []
        for side in (w, h, w, h):
            if side > 0.0:
                segs.append((side, 0.0))
            segs.append((quarter, kappa))
        return segs


PathFamily = Union[Line, CircleLoop, SCurve, RoundedRectangle]


@dataclass(frozen=True)
class ConstantSpeed:
    """Constant translational speed; ``nu=None`` derives length/total_time."""

    nu: Optional[float] = None


@dataclass(frozen=True)
class TrapezoidalSpeed:
    """Rest-to-rest profile: ramp at ``accel`` to ``nu_max``, cruise, ramp down."""

    nu_max: float
    accel: float

    def __post_init__(self):
        _positive("nu_max", self.nu_max)
        _positive("accel", self.accel)


SpeedProfile = Union[ConstantSpeed, TrapezoidalSpeed]


@dataclass(frozen=True)
class TrackSpec:
    """Everything needed to sample one reference trajectory."""

    path: PathFamily
    total_time: float
    ts: float
    speed: SpeedProfile = ConstantSpeed()
    start: Pose = Pose(0.0, 0.0, 0.0)

    def __post_init__(self):
        _positive("total_time", self.total_time)
        _positive("ts", self.ts)

    def n_timesteps(self) -> int:
        ratio = self.total_time / self.ts
        n = round(ratio)
        if n < 1 or abs(ratio - n) > 1e-6:
            raise TrackSpecError(
                f"total_time/ts must be a positive integer, got {ratio!r}"
            )
        return n


class _PathGeometry:
    """Closed-form pose lookup along a chain of straight/arc segments."""

    def __init__(self, start: Pose, segments: List[Tuple[float, float]], closed: bool):
        segs = [(float(l), float(k)) for l, k in segments if l > 0.0]
        if not segs:
            raise TrackSpecError("path has zero total length")
        self.closed = closed
        self._lengths = np.array([l for l, _ in segs])
        self._kappa = np.array([k for _, k in segs])
        self._starts = np.concatenate([[0.0], np.cumsum(self._lengths)[:-1]])
        self.length = float(self._lengths.sum())

        # exact segment-entry poses, chained analytically
        xs, ys, ths = [start.x], [start.y], [start.theta]
        for l, k in segs:
            x0, y0, th0 = xs[-1], ys[-1], ths[-1]
            if k == 0.0:
                xs.append(x0 + l * math.cos(th0))
                ys.append(y0 + l * math.sin(th0))
                ths.append(th0)
            else:
                th1 = th0 + k * l
                xs.append(x0 + (math.sin(th1) - math.sin(th0)) / k)
                ys.append(y0 - (math.cos(th1) - math.cos(th0)) / k)
                ths.append(th1)
        self._x0 = np.array(xs[:-1])
        self._y0 = np.array(ys[:-1])
        self._th0 = np.array(ths[:-1])

    def _segment_index(self, s: np.ndarray) -> np.ndarray:
        ends = self._starts + self._lengths
        idx = np.searchsorted(ends, s, side="left")
        return np.clip(idx, 0, len(self._lengths) - 1)

    def pose_at(self, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = np.asarray(s, dtype=float)
        idx = self._segment_index(s)
        u = s - self._starts[idx]
        x0, y0, th0 = self._x0[idx], self._y0[idx], self._th0[idx]
        k = self._kappa[idx]
        straight = k == 0.0
        th = th0 + k * u
        ksafe = np.where(straight, 1.0, k)
        x = np.where(straight, x0 + u * np.cos(th0), x0 + (np.sin(th) - np.sin(th0)) / ksafe)
        y = np.where(straight, y0 + u * np.sin(th0), y0 - (np.cos(th) - np.cos(th0)) / ksafe)
        return x, y, normalize_angle_array(th)

    def curvature_at(self, s: np.ndarray) -> np.ndarray:
        return self._kappa[self._segment_index(np.asarray(s, dtype=float))]


def _speed_samples(spec: TrackSpec, path_length: float, t: np.ndarray):
    """Distance along the path and speed at each sample time."""
    profile = spec.speed
    if isinstance(profile, ConstantSpeed):
        nu = profile.nu
        if nu is None:
            nu = path_length / spec.total_time
        if not (math.isfinite(nu) and nu > 0.0):
            raise TrackSpecError(f"required constant speed is not usable: {nu}")
        return nu * t, np.full_like(t, nu)

    t_ramp = profile.nu_max / profile.accel
    if 2.0 * t_ramp > spec.total_time:
        raise TrackSpecError(
            "trapezoidal profile cannot reach nu_max and stop within total_time"
        )
    a, vm, T = profile.accel, profile.nu_max, spec.total_time
    nu = np.minimum(np.minimum(a * t, vm), a * (T - t))
    nu = np.maximum(nu, 0.0)
    s_ramp = 0.5 * vm * t_ramp
    s = np.where(
        t <= t_ramp,
        0.5 * a * t * t,
        np.where(
            t <= T - t_ramp,
            s_ramp + vm * (t - t_ramp),
            s_ramp + vm * (T - 2.0 * t_ramp) + s_ramp - 0.5 * a * (T - t) ** 2,
        ),
    )
    return s, nu


@dataclass
class ReferenceTrajectory:
    """Sampled reference: arrays of length n_steps + 1."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    nu: np.ndarray
    omega: np.ndarray
    ts: float
    spec: TrackSpec

    @property
    def n_steps(self) -> int:
        return len(self.t) - 1

    def point(self, k: int) -> ReferencePoint:
        return ReferencePoint(
            Pose(float(self.x[k]), float(self.y[k]), float(self.theta[k])),
            float(self.nu[k]),
            float(self.omega[k]),
        )

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "k": np.arange(len(self.t)),
                "x_r": self.x,
                "y_r": self.y,
                "theta_r": self.theta,
                "nu_r": self.nu,
                "omega_r": self.omega,
            }
        )


def generate_track(spec: TrackSpec) -> ReferenceTrajectory:
    """Sample the reference trajectory for every timestep.

    Closed families (circle, rounded rectangle) wrap around for as many laps
    as the time budget covers; open families reject a budget that travels
    farther than the geometry provides.
    """
    n = spec.n_timesteps()
    geom = _PathGeometry(spec.start, spec.path.segments(), spec.path.closed)
    t = np.arange(n + 1) * spec.ts
    s, nu = _speed_samples(spec, geom.length, t)
    if not np.isfinite(s).all():
        raise TrackSpecError("distance along path is not finite")
    if geom.closed:
        s = np.mod(s, geom.length)
    else:
        overshoot = s[-1] - geom.length
        if overshoot > 1e-9 * max(1.0, geom.length):
            raise TrackSpecError(
                f"time budget travels {s[-1]:.6g} m but the path is only "
                f"{geom.length:.6g} m long"
            )
        s = np.minimum(s, geom.length)
    x, y, theta = geom.pose_at(s)
    omega = geom.curvature_at(s) * nu
    return ReferenceTrajectory(t, x, y, theta, nu, omega, spec.ts, spec)
