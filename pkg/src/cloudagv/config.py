"""Experiment config files: strict schema, defaults, CLI overrides, provenance."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import yaml

from .channel import OutageModel
from .controller import Gains
from .kinematics import Pose
from .reference import (
    CircleLoop,
    ConstantSpeed,
    Line,
    RoundedRectangle,
    SCurve,
    TrackSpec,
    TrapezoidalSpeed,
)
from .sim import ERROR_MONITORS, SimConfig

PLOT_FORMATS = ("svg", "png", "pdf")


class ConfigError(ValueError):
    """Config file violates the schema."""


def _require_mapping(node, path: str) -> dict:
    if node is None:
        return {}
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(node).__name__}")
    return node


def _reject_unknown(node: dict, allowed, path: str) -> None:
    unknown = sorted(set(node) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}; allowed keys are {sorted(allowed)}")


def _get_number(node: dict, key: str, path: str, default=None, required: bool = False):
    if key not in node or node[key] is None:
        if required:
            raise ConfigError(f"{path}.{key}: required")
        return default
    v = node[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {v!r}")
    if not math.isfinite(float(v)):
        raise ConfigError(f"{path}.{key}: must be finite, got {v!r}")
    return float(v)


def _get_int(node: dict, key: str, path: str, default=None, required: bool = False):
    v = _get_number(node, key, path, default=default, required=required)
    if v is None:
        return None
    if v != int(v):
        raise ConfigError(f"{path}.{key}: expected an integer, got {v!r}")
    return int(v)


def _get_bool(node: dict, key: str, path: str, default: bool) -> bool:
    if key not in node or node[key] is None:
        return default
    v = node[key]
    if not isinstance(v, bool):
        raise ConfigError(f"{path}.{key}: expected true/false, got {v!r}")
    return v


def _get_str(node: dict, key: str, path: str, default=None, choices=None, required=False):
    if key not in node or node[key] is None:
        if required:
            raise ConfigError(f"{path}.{key}: required")
        return default
    v = node[key]
    if not isinstance(v, str):
        raise ConfigError(f"{path}.{key}: expected a string, got {v!r}")
    if choices is not None and v not in choices:
        raise ConfigError(f"{path}.{key}: expected one of {list(choices)}, got {v!r}")
    return v


def _parse_start(node, path: str) -> Pose:
    node = _require_mapping(node, path)
    _reject_unknown(node, {"x", "y", "heading_deg"}, path)
    return Pose(
        _get_number(node, "x", path, default=0.0),
        _get_number(node, "y", path, default=0.0),
        math.radians(_get_number(node, "heading_deg", path, default=0.0)),
    )


_FAMILY_KEYS = {
    "line": {"length"},
    "circle": {"radius", "direction"},
    "s_curve": {"straight1", "radius1", "arc1_deg", "straight2", "radius2", "arc2_deg", "straight3"},
    "rounded_rectangle": {"width", "height", "corner_radius"},
}
_TRACK_COMMON = {"family", "start", "total_time", "ts", "speed"}


def _parse_path(node: dict, family: str, path: str):
    if family == "line":
        return Line(length=_get_number(node, "length", path, required=True))
    if family == "circle":
        return CircleLoop(
            radius=_get_number(node, "radius", path, required=True),
            direction=_get_str(node, "direction", path, default="ccw", choices=("ccw", "cw")),
        )
    if family == "s_curve":
        return SCurve(
            straight1=_get_number(node, "straight1", path, default=0.0),
            radius1=_get_number(node, "radius1", path, default=1.0),
            arc1=math.radians(_get_number(node, "arc1_deg", path, default=0.0)),
            straight2=_get_number(node, "straight2", path, default=0.0),
            radius2=_get_number(node, "radius2", path, default=1.0),
            arc2=math.radians(_get_number(node, "arc2_deg", path, default=0.0)),
            straight3=_get_number(node, "straight3", path, default=0.0),
        )
    if family == "rounded_rectangle":
        return RoundedRectangle(
            width=_get_number(node, "width", path, required=True),
            height=_get_number(node, "height", path, required=True),
            corner_radius=_get_number(node, "corner_radius", path, required=True),
        )
    raise ConfigError(f"{path}.family: unknown family {family!r}")


def _parse_speed(node, path: str):
    node = _require_mapping(node, path)
    profile = _get_str(node, "profile", path, default="constant",
                       choices=("constant", "trapezoidal"))
    if profile == "constant":
        _reject_unknown(node, {"profile", "nu"}, path)
        return ConstantSpeed(nu=_get_number(node, "nu", path, default=None))
    _reject_unknown(node, {"profile", "nu_max", "accel"}, path)
    return TrapezoidalSpeed(
        nu_max=_get_number(node, "nu_max", path, required=True),
        accel=_get_number(node, "accel", path, required=True),
    )


def _parse_track(node, path: str) -> TrackSpec:
    node = _require_mapping(node, path)
    family = _get_str(node, "family", path, required=True, choices=tuple(_FAMILY_KEYS))
    _reject_unknown(node, _TRACK_COMMON | _FAMILY_KEYS[family], path)
    return TrackSpec(
        path=_parse_path(node, family, path),
        total_time=_get_number(node, "total_time", path, required=True),
        ts=_get_number(node, "ts", path, required=True),
        speed=_parse_speed(node.get("speed"), f"{path}.speed"),
        start=_parse_start(node.get("start"), f"{path}.start"),
    )


def _parse_gains(node, path: str) -> Gains:
    node = _require_mapping(node, path)
    _reject_unknown(node, {"kx", "ky", "ktheta"}, path)
    try:
        return Gains(
            kx=_get_number(node, "kx", path, required=True),
            ky=_get_number(node, "ky", path, default=64.0),
            ktheta=_get_number(node, "ktheta", path, default=16.0),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse_offset(node, path: str):
    node = _require_mapping(node, path)
    _reject_unknown(node, {"x", "y", "theta_deg"}, path)
    return (
        _get_number(node, "x", path, default=0.0),
        _get_number(node, "y", path, default=0.0),
        math.radians(_get_number(node, "theta_deg", path, default=0.0)),
    )


def _parse_outage(node, path: str) -> OutageModel:
    node = _require_mapping(node, path)
    variant = _get_str(
        node, "variant", path, default="perfect",
        choices=("perfect", "bursts", "bernoulli", "gilbert_elliott"),
    )
    allowed = {"variant", "seed"}
    if variant == "bursts":
        allowed |= {"bursts"}
    elif variant == "bernoulli":
        allowed |= {"p_loss"}
    elif variant == "gilbert_elliott":
        allowed |= {"p_good_to_bad", "p_bad_to_good", "loss_good", "loss_bad"}
    _reject_unknown(node, allowed, path)
    seed = _get_int(node, "seed", path, default=0)
    try:
        if variant == "perfect":
            return OutageModel(seed=seed)
        if variant == "bursts":
            raw = node.get("bursts")
            if not isinstance(raw, list):
                raise ConfigError(f"{path}.bursts: expected a list of [start, length] pairs")
            windows = []
            for i, item in enumerate(raw):
                if not (isinstance(item, list) and len(item) == 2):
                    raise ConfigError(f"{path}.bursts[{i}]: expected [start, length]")
                windows.append((int(item[0]), int(item[1])))
            return OutageModel(variant="bursts", bursts=tuple(windows), seed=seed)
        if variant == "bernoulli":
            return OutageModel.bernoulli(_get_number(node, "p_loss", path, required=True), seed=seed)
        return OutageModel.gilbert_elliott(
            p_good_to_bad=_get_number(node, "p_good_to_bad", path, required=True),
            p_bad_to_good=_get_number(node, "p_bad_to_good", path, required=True),
            loss_good=_get_number(node, "loss_good", path, default=0.0),
            loss_bad=_get_number(node, "loss_bad", path, default=1.0),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


_TOP_KEYS = {
    "name",
    "track",
    "gains",
    "initial_offset",
    "nu_max",
    "outage",
    "stability_analysis",
    "stability_tol",
    "stale_reference_velocity",
    "error_monitor",
    "output",
}


@dataclass
class ExperimentConfig:
    """Validated experiment: simulation config plus output settings."""

    name: str
    sim: SimConfig
    out_dir: Path
    plots: bool
    plot_format: str
    resolved: dict
    overrides: List[str]

    def provenance_lines(self) -> List[str]:
        lines = [f"config: {json.dumps(self.resolved, sort_keys=True)}"]
        if self.overrides:
            lines.append("overrides: " + " ".join(self.overrides))
        return lines


def _set_by_path(raw: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = raw
    for key in keys[:-1]:
        child = node.get(key)
        if child is None:
            child = {}
            node[key] = child
        if not isinstance(child, dict):
            raise ConfigError(f"override {dotted}: {key} is not a mapping")
        node = child
    node[keys[-1]] = value


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Load, override and validate an experiment config.

    ``overrides`` maps dotted config paths (e.g. ``gains.kx``) to values; they
    are applied to the raw document before validation so an invalid override
    fails the same way an invalid file would.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    raw = _require_mapping(raw, str(path))

    override_notes = []
    if overrides:
        for dotted, value in overrides.items():
            _set_by_path(raw, dotted, value)
            override_notes.append(f"--{dotted.replace('.', '-').replace('_', '-')}={value}")

    _reject_unknown(raw, _TOP_KEYS, str(path))
    name = _get_str(raw, "name", str(path), default=path.stem)

    track = _parse_track(raw.get("track"), "track")
    gains = _parse_gains(raw.get("gains"), "gains")
    offset = _parse_offset(raw.get("initial_offset"), "initial_offset")
    nu_max = _get_number(raw, "nu_max", "", default=None)
    outage = _parse_outage(raw.get("outage"), "outage")
    stability_analysis = _get_bool(raw, "stability_analysis", "", default=True)
    stability_tol = _get_number(raw, "stability_tol", "", default=1e-9)
    stale_velocity = _get_bool(raw, "stale_reference_velocity", "", default=True)
    monitor = _get_str(raw, "error_monitor", "", default="world_y", choices=ERROR_MONITORS)

    out_node = _require_mapping(raw.get("output"), "output")
    _reject_unknown(out_node, {"directory", "plots", "format"}, "output")
    out_dir = Path(_get_str(out_node, "directory", "output", default=f"out/{name}"))
    plots = _get_bool(out_node, "plots", "output", default=True)
    plot_format = _get_str(out_node, "format", "output", default="svg", choices=PLOT_FORMATS)

    try:
        sim = SimConfig(
            track=track,
            gains=gains,
            initial_offset=offset,
            nu_max=nu_max,
            outage=outage,
            stability_analysis=stability_analysis,
            stability_tol=stability_tol,
            stale_reference_velocity=stale_velocity,
            error_monitor=monitor,
        )
        # surfaces inconsistent geometry/time budgets before any run starts
        track.n_timesteps()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    resolved = {
        "name": name,
        "track": {
            "family": raw["track"]["family"],
            **{k: v for k, v in raw["track"].items() if k != "family"},
        },
        "gains": {"kx": gains.kx, "ky": gains.ky, "ktheta": gains.ktheta},
        "initial_offset": {"x": offset[0], "y": offset[1], "theta_rad": offset[2]},
        "nu_max": nu_max,
        "outage": {
            "variant": outage.variant,
            "seed": outage.seed,
            "bursts": [list(b) for b in outage.bursts],
            "p_loss": outage.p_loss,
            "p_good_to_bad": outage.p_good_to_bad,
            "p_bad_to_good": outage.p_bad_to_good,
            "loss_good": outage.loss_good,
            "loss_bad": outage.loss_bad,
        },
        "stability_analysis": stability_analysis,
        "stability_tol": stability_tol,
        "stale_reference_velocity": stale_velocity,
        "error_monitor": monitor,
        "output": {"directory": str(out_dir), "plots": plots, "format": plot_format},
    }
    return ExperimentConfig(
        name=name,
        sim=sim,
        out_dir=out_dir,
        plots=plots,
        plot_format=plot_format,
        resolved=resolved,
        overrides=override_notes,
    )
