"""Closed-loop engine: per step, uplink delivery, stale error, control law,
saturation, plant step; then stability columns and run metrics."""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .channel import OutageModel, initial_buffer, realize_outages, uplink_step
from .controller import (
    ErrorVec,
    Gains,
    ReferencePoint,
    compute_error_stale,
    control_law,
    saturate,
)
from .kinematics import (
    DivergenceError,
    Pose,
    check_position_bounds,
    normalize_angle,
    step_euler,
)
from .reference import ReferenceTrajectory, TrackSpec, generate_track
from .stability import (
    CLASS_NAMES,
    DEFAULT_TOL,
    UNSTABLE_CODE,
    StabilityReport,
    classify_magnitudes,
    control_matrix,
    eigenvalues_3x3,
)

ERROR_MONITORS = ("world_y", "body_lateral")

# Exact column contract of the per-run trace CSV.
TRACE_COLUMNS = [
    "k",
    "t",
    "x_r",
    "y_r",
    "theta_r",
    "x_c",
    "y_c",
    "theta_c",
    "x_e",
    "y_e",
    "theta_e",
    "nu",
    "omega",
    "saturated",
    "n_ul",
    "lambda1_re",
    "lambda1_im",
    "lambda2_re",
    "lambda2_im",
    "lambda3_re",
    "lambda3_im",
    "max_eig_mag",
    "stability_class",
]


@dataclass(frozen=True)
class SimConfig:
    """One closed-loop experiment.

    ``initial_offset`` is a world-frame displacement (dx, dy, dtheta) applied
    to the plant pose at k=0. ``stale_reference_velocity`` selects whether the
    outage-mode control law is fed the reference velocities at the stale index
    k - n_ul (default) or at the current index. ``error_monitor`` picks the
    signal the damping metrics watch: the world-frame y deviation (default)
    or the body-frame lateral error component. ``bypass_channel`` removes the
    channel entirely and exists to validate that a perfect channel is
    transparent.
    """

    track: TrackSpec
    gains: Gains
    initial_offset: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    nu_max: Optional[float] = None
    outage: OutageModel = OutageModel()
    stability_analysis: bool = True
    stability_tol: float = DEFAULT_TOL
    stale_reference_velocity: bool = True
    error_monitor: str = "world_y"
    bypass_channel: bool = False

    def __post_init__(self):
        if self.nu_max is not None and self.nu_max <= 0.0:
            raise ValueError(f"nu_max must be positive, got {self.nu_max}")
        if self.error_monitor not in ERROR_MONITORS:
            raise ValueError(
                f"error_monitor must be one of {ERROR_MONITORS}, got {self.error_monitor!r}"
            )


@dataclass
class Trace:
    """Per-step record arrays; one record per executed timestep."""

    ts: float
    k: np.ndarray
    t: np.ndarray
    x_r: np.ndarray
    y_r: np.ndarray
    theta_r: np.ndarray
    x_c: np.ndarray
    y_c: np.ndarray
    theta_c: np.ndarray
    x_e: np.ndarray
    y_e: np.ndarray
    theta_e: np.ndarray
    nu: np.ndarray
    omega: np.ndarray
    saturated: np.ndarray
    n_ul: np.ndarray
    eigenvalues: Optional[np.ndarray] = None  # (n, 3) complex
    max_eig_mag: Optional[np.ndarray] = None
    stability_code: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.k)

    @property
    def stability_on(self) -> bool:
        return self.eigenvalues is not None

    @property
    def world_y_error(self) -> np.ndarray:
        return self.y_r - self.y_c

    @property
    def world_x_error(self) -> np.ndarray:
        return self.x_r - self.x_c

    def monitored_error(self, monitor: str) -> np.ndarray:
        if monitor == "world_y":
            return self.world_y_error
        if monitor == "body_lateral":
            return self.y_e
        raise ValueError(f"unknown error monitor {monitor!r}")

    def stability_report(self, k: int) -> StabilityReport:
        if not self.stability_on:
            raise ValueError("stability analysis was disabled for this run")
        return StabilityReport(
            eigenvalues=self.eigenvalues[k],
            max_magnitude=float(self.max_eig_mag[k]),
            classification=CLASS_NAMES[int(self.stability_code[k])],
            k=int(self.k[k]),
            n_ul=int(self.n_ul[k]),
        )

    def to_dataframe(self) -> pd.DataFrame:
        n = len(self)
        if self.stability_on:
            eig = self.eigenvalues
            lam_cols = {
                "lambda1_re": eig[:, 0].real,
                "lambda1_im": eig[:, 0].imag,
                "lambda2_re": eig[:, 1].real,
                "lambda2_im": eig[:, 1].imag,
                "lambda3_re": eig[:, 2].real,
                "lambda3_im": eig[:, 2].imag,
            }
            max_mag = self.max_eig_mag
            classes = np.array(CLASS_NAMES, dtype=object)[self.stability_code]
        else:
            nan = np.full(n, np.nan)
            lam_cols = {name: nan for name in (
                "lambda1_re", "lambda1_im", "lambda2_re",
                "lambda2_im", "lambda3_re", "lambda3_im",
            )}
            max_mag = np.full(n, np.nan)
            classes = np.full(n, "", dtype=object)
        data = {
            "k": self.k,
            "t": self.t,
            "x_r": self.x_r,
            "y_r": self.y_r,
            "theta_r": self.theta_r,
            "x_c": self.x_c,
            "y_c": self.y_c,
            "theta_c": self.theta_c,
            "x_e": self.x_e,
            "y_e": self.y_e,
            "theta_e": self.theta_e,
            "nu": self.nu,
            "omega": self.omega,
            "saturated": self.saturated.astype(int),
            "n_ul": self.n_ul,
            **lam_cols,
            "max_eig_mag": max_mag,
            "stability_class": classes,
        }
        return pd.DataFrame(data, columns=TRACE_COLUMNS)

    def write_csv(self, path, header_lines: Sequence[str] = ()) -> None:
        df = self.to_dataframe()
        with open(path, "w", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            df.to_csv(fh, index=False, lineterminator="\n")

    @staticmethod
    def read_csv(path) -> pd.DataFrame:
        # round_trip parsing keeps written floats bit-exact on reload
        return pd.read_csv(path, comment="#", float_precision="round_trip")


class SimulationDiverged(DivergenceError):
    """Run aborted by the divergence guard; carries the partial trace."""

    def __init__(self, message: str, step: int, trace: "Trace"):
        super().__init__(message)
        self.step = step
        self.trace = trace


@dataclass
class RunMetrics:
    """Transient quality of one run, judged on the monitored error signal.

    Settling uses a band of 1% of the initial monitored error with a 1 cm
    floor; the damping class counts sign changes of the signal while it is
    outside that band (0 monotone, 1 single-overshoot, >=2 oscillatory).
    """

    settled: bool
    settling_time_steps: Optional[int]
    overshoot_count: int
    damping_class: str
    peak_abs_nu: float
    max_abs_y_e: float
    final_error_norm: float
    unstable_step_fraction: Optional[float]
    monitor: str
    delta: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def transient_profile(values: np.ndarray, delta: float):
    """Settling index, overshoot count and damping class of an error signal.

    Settling index is the smallest k with |values| <= delta for every later
    sample (None if the signal is still outside the band at the end).
    Overshoots are sign changes between consecutive samples whose magnitude
    exceeds delta, counted from the first such departure.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty signal")
    if delta < 0.0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    above = np.flatnonzero(np.abs(v) > delta)
    if above.size == 0:
        settled, settling = True, 0
        flips = 0
    else:
        last = int(above[-1])
        if last + 1 >= v.size:
            settled, settling = False, None
        else:
            settled, settling = True, last + 1
        signs = np.sign(v[above])
        flips = int(np.count_nonzero(signs[1:] != signs[:-1]))
    if flips == 0:
        damping = "monotone"
    elif flips == 1:
        damping = "single-overshoot"
    else:
        damping = "oscillatory"
    return settled, settling, flips, damping


def compute_metrics(
    trace: Trace,
    monitor: str = "world_y",
    settle_fraction: float = 0.01,
    settle_floor: float = 0.01,
) -> RunMetrics:
    """Quantify the transient of one run.

    The monitored signal is either the world-frame y deviation of the plant
    from the reference or the body-frame lateral error component. The 1 cm
    floor on the settling band keeps numerical noise from producing settling
    chatter.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    y = trace.monitored_error(monitor)
    delta = max(settle_fraction * abs(float(y[0])), settle_floor)
    settled, settling, flips, damping = transient_profile(y, delta)
    if trace.stability_on:
        unstable_fraction = float(np.mean(trace.stability_code == UNSTABLE_CODE))
    else:
        unstable_fraction = None
    final_err = math.hypot(
        float(trace.x_r[-1] - trace.x_c[-1]), float(trace.y_r[-1] - trace.y_c[-1])
    )
    return RunMetrics(
        settled=settled,
        settling_time_steps=settling,
        overshoot_count=flips,
        damping_class=damping,
        peak_abs_nu=float(np.abs(trace.nu).max()),
        max_abs_y_e=float(np.abs(y).max()),
        final_error_norm=final_err,
        unstable_step_fraction=unstable_fraction,
        monitor=monitor,
        delta=delta,
    )


def _finalize_trace(config: SimConfig, ts: float, rows: dict, n_filled: int) -> Trace:
    trace = Trace(
        ts=ts,
        k=np.arange(n_filled),
        t=np.asarray(rows["t"][:n_filled]),
        x_r=np.asarray(rows["x_r"][:n_filled]),
        y_r=np.asarray(rows["y_r"][:n_filled]),
        theta_r=np.asarray(rows["theta_r"][:n_filled]),
        x_c=np.asarray(rows["x_c"][:n_filled]),
        y_c=np.asarray(rows["y_c"][:n_filled]),
        theta_c=np.asarray(rows["theta_c"][:n_filled]),
        x_e=np.asarray(rows["x_e"][:n_filled]),
        y_e=np.asarray(rows["y_e"][:n_filled]),
        theta_e=np.asarray(rows["theta_e"][:n_filled]),
        nu=np.asarray(rows["nu"][:n_filled]),
        omega=np.asarray(rows["omega"][:n_filled]),
        saturated=np.asarray(rows["saturated"][:n_filled], dtype=bool),
        n_ul=np.asarray(rows["n_ul"][:n_filled], dtype=np.int64),
    )
    if config.stability_analysis and n_filled > 0:
        mats = control_matrix(
            trace.theta_c,
            np.asarray(rows["theta_stale"][:n_filled]),
            np.asarray(rows["nu_r_stale"][:n_filled]),
            config.gains,
            ts,
        )
        lam = eigenvalues_3x3(mats)
        mags = np.abs(lam)
        trace.eigenvalues = lam
        trace.max_eig_mag = mags.max(axis=1)
        trace.stability_code = classify_magnitudes(mags, config.stability_tol)
    return trace


def run(config: SimConfig) -> Tuple[Trace, RunMetrics]:
    """Execute one closed-loop run; deterministic given the config.

    Event order within a step: sample the channel and update the uplink
    buffer with the current plant state, compute the stale error against the
    current reference, apply the control law (reference velocities at the
    stale index by default) and the velocity limit, then advance the plant.
    Stability columns use the true current heading (the analyst's view), the
    buffered stale heading and the stale-index reference velocity.
    """
    traj = generate_track(config.track)
    n = traj.n_steps
    ts = config.track.ts
    gains = config.gains

    dx, dy, dtheta = config.initial_offset
    pose = Pose(
        float(traj.x[0]) + dx,
        float(traj.y[0]) + dy,
        normalize_angle(float(traj.theta[0]) + dtheta),
    )

    if config.bypass_channel:
        outages = None
    else:
        outages = realize_outages(config.outage, n)
        if n > 0:
            outages[0] = False  # initial position is always known to the cloud
    buf = initial_buffer(pose)

    # native float lists are markedly faster than numpy scalars in this loop
    xr_l = traj.x.tolist()
    yr_l = traj.y.tolist()
    thr_l = traj.theta.tolist()
    nur_l = traj.nu.tolist()
    omr_l = traj.omega.tolist()

    keys = (
        "t", "x_r", "y_r", "theta_r", "x_c", "y_c", "theta_c",
        "x_e", "y_e", "theta_e", "nu", "omega", "saturated", "n_ul",
        "theta_stale", "nu_r_stale",
    )
    rows = {key: [] for key in keys}
    stale_velocity = config.stale_reference_velocity
    bypass = config.bypass_channel
    nu_max = config.nu_max

    for k in range(n):
        if bypass:
            stale_pose = pose
            n_ul = 0
        else:
            buf = uplink_step(buf, pose, k, bool(outages[k]))
            stale_pose = buf.last_received
            n_ul = buf.n_ul

        ref_pose = Pose(xr_l[k], yr_l[k], thr_l[k])
        err = compute_error_stale(ref_pose, stale_pose)
        vk = k - n_ul if stale_velocity else k
        ref = ReferencePoint(ref_pose, nur_l[vk], omr_l[vk])
        raw = control_law(err, ref, gains)
        u = saturate(raw, nu_max)

        rows["t"].append(k * ts)
        rows["x_r"].append(ref_pose.x)
        rows["y_r"].append(ref_pose.y)
        rows["theta_r"].append(ref_pose.theta)
        rows["x_c"].append(pose.x)
        rows["y_c"].append(pose.y)
        rows["theta_c"].append(pose.theta)
        rows["x_e"].append(err.x_e)
        rows["y_e"].append(err.y_e)
        rows["theta_e"].append(err.theta_e)
        rows["nu"].append(u.nu)
        rows["omega"].append(u.omega)
        rows["saturated"].append(u.nu != raw.nu)
        rows["n_ul"].append(n_ul)
        rows["theta_stale"].append(stale_pose.theta)
        rows["nu_r_stale"].append(nur_l[k - n_ul])

        try:
            pose = step_euler(pose, u, ts)
            check_position_bounds(pose)
        except DivergenceError as exc:
            partial = _finalize_trace(config, ts, rows, k + 1)
            raise SimulationDiverged(
                f"run diverged at step {k}: {exc}", step=k, trace=partial
            ) from exc

    trace = _finalize_trace(config, ts, rows, n)
    metrics = compute_metrics(trace, config.error_monitor)
    return trace, metrics


SWEEPABLE_PARAMETERS = ("kx", "ky", "ktheta", "nu_max", "ts", "seed")


def apply_parameter(config: SimConfig, param: str, value) -> SimConfig:
    """New config with one addressable parameter replaced."""
    if param in ("kx", "ky", "ktheta"):
        gains = dataclasses.replace(config.gains, **{param: float(value)})
        return dataclasses.replace(config, gains=gains)
    if param == "nu_max":
        return dataclasses.replace(config, nu_max=None if value is None else float(value))
    if param == "ts":
        track = dataclasses.replace(config.track, ts=float(value))
        return dataclasses.replace(config, track=track)
    if param == "seed":
        outage = dataclasses.replace(config.outage, seed=int(value))
        return dataclasses.replace(config, outage=outage)
    raise ValueError(
        f"parameter {param!r} is not sweepable; expected one of {SWEEPABLE_PARAMETERS}"
    )


@dataclass
class SweepEntry:
    """Result of one sweep point; exactly one of (metrics, error) is set."""

    value: object
    trace: Optional[Trace]
    metrics: Optional[RunMetrics]
    error: Optional[str]


def sweep(
    config: SimConfig,
    param: str,
    values: Sequence,
    jobs: int = 1,
    keep_traces: bool = True,
) -> List[SweepEntry]:
    """One independent run per value, all with identical seeds.

    Individual run failures are recorded and the sweep continues. Results come
    back in input order regardless of worker scheduling.
    """

    def one(value) -> SweepEntry:
        try:
            cfg = apply_parameter(config, param, value)
            trace, metrics = run(cfg)
            return SweepEntry(value, trace if keep_traces else None, metrics, None)
        except Exception as exc:  # noqa: BLE001 - failures become table rows
            return SweepEntry(value, None, None, f"{type(exc).__name__}: {exc}")

    values = list(values)
    if not values:
        return []
    if jobs <= 1 or len(values) == 1:
        return [one(v) for v in values]
    with ThreadPoolExecutor(max_workers=min(jobs, len(values))) as pool:
        return list(pool.map(one, values))


def sweep_table(entries: Sequence[SweepEntry], param: str) -> pd.DataFrame:
    """Comparison table over sweep points; failed runs keep an error column."""
    rows = []
    for e in entries:
        row = {"param": param, "value": e.value, "error": e.error or ""}
        if e.metrics is not None:
            row.update(e.metrics.to_dict())
        rows.append(row)
    return pd.DataFrame(rows)
