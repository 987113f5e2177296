"""Discrete-time simulator and stability analyzer for a cloud-controlled AGV
tracking a reference path with position feedback over a lossy uplink."""

from .channel import (
    OutageModel,
    OutageProcess,
    UplinkBuffer,
    initial_buffer,
    is_outage,
    realize_outages,
    uplink_step,
)
from .controller import (
    ErrorVec,
    Gains,
    ReferencePoint,
    compute_error,
    compute_error_stale,
    control_law,
    rotation_to_body,
    saturate,
)
from .kinematics import (
    ControlInput,
    DivergenceError,
    Pose,
    motion_jacobian,
    normalize_angle,
    step_euler,
    step_fine,
)
from .reference import (
    CircleLoop,
    ConstantSpeed,
    Line,
    ReferenceTrajectory,
    RoundedRectangle,
    SCurve,
    TrackSpec,
    TrackSpecError,
    TrapezoidalSpeed,
    generate_track,
)
from .sim import (
    RunMetrics,
    SimConfig,
    SimulationDiverged,
    Trace,
    compute_metrics,
    run,
    sweep,
    sweep_table,
    transient_profile,
)
from .stability import (
    StabilityMap,
    StabilityReport,
    check_stability_step,
    continuous_error_dynamics,
    control_matrix,
    eigenvalues_3x3,
    error_dynamics_jacobian,
    hurwitz_check,
    reference_stability_map,
)

__version__ = "0.1.0"

__all__ = [
    "CircleLoop",
    "ConstantSpeed",
    "ControlInput",
    "DivergenceError",
    "ErrorVec",
    "Gains",
    "Line",
    "OutageModel",
    "OutageProcess",
    "Pose",
    "ReferencePoint",
    "ReferenceTrajectory",
    "RoundedRectangle",
    "RunMetrics",
    "SCurve",
    "SimConfig",
    "SimulationDiverged",
    "StabilityMap",
    "StabilityReport",
    "Trace",
    "TrackSpec",
    "TrackSpecError",
    "TrapezoidalSpeed",
    "UplinkBuffer",
    "check_stability_step",
    "compute_error",
    "compute_error_stale",
    "compute_metrics",
    "continuous_error_dynamics",
    "control_law",
    "control_matrix",
    "eigenvalues_3x3",
    "error_dynamics_jacobian",
    "generate_track",
    "hurwitz_check",
    "initial_buffer",
    "is_outage",
    "motion_jacobian",
    "normalize_angle",
    "realize_outages",
    "reference_stability_map",
    "rotation_to_body",
    "run",
    "saturate",
    "step_euler",
    "step_fine",
    "sweep",
    "sweep_table",
    "transient_profile",
    "uplink_step",
]
