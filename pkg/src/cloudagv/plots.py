"""Figure rendering: track overlays, error/velocity traces, stability heat maps.

Everything renders straight to files through the Agg backend; output is
deterministic (fixed SVG hash salt, no embedded dates).
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

plt.rcParams["svg.hashsalt"] = "cloudagv"

TRACK_COLUMNS = ("x_r", "y_r", "x_c", "y_c")
ERROR_COLUMNS = ("k", "y_r", "y_c", "y_e")
VELOCITY_COLUMNS = ("k", "nu")

LabeledTrace = Tuple[str, pd.DataFrame]


def _check_trace(df: pd.DataFrame, needed: Sequence[str], label: str) -> None:
    if len(df) == 0:
        raise ValueError(f"trace {label!r} is empty")
    missing = [c for c in needed if c not in df.columns]
    if missing:
        raise ValueError(f"trace {label!r} is missing columns: {missing}")


def _marker_kwargs(df: pd.DataFrame) -> dict:
    # a single-row trace would be invisible without a marker
    return {"marker": "o", "markersize": 3} if len(df) == 1 else {}


def _save(fig, out_path, description: str) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    metadata = {}
    suffix = out_path.suffix.lower()
    if suffix == ".svg":
        metadata = {"Description": description, "Date": None}
    elif suffix == ".png":
        metadata = {"Description": description}
    fig.tight_layout()
    fig.savefig(out_path, metadata=metadata or None)
    plt.close(fig)
    return out_path


def plot_track_overlay(traces: Sequence[LabeledTrace], out_path, description: str = "") -> Path:
    """Reference path plus the followed path of every labeled trace."""
    if not traces:
        raise ValueError("no traces to plot")
    fig, ax = plt.subplots(figsize=(6.0, 6.0))
    first_label, first = traces[0]
    _check_trace(first, TRACK_COLUMNS, first_label)
    ax.plot(first["x_r"], first["y_r"], "k--", linewidth=1.2, label="reference")
    for label, df in traces:
        _check_trace(df, TRACK_COLUMNS, label)
        ax.plot(df["x_c"], df["y_c"], linewidth=1.0, label=label, **_marker_kwargs(df))
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    ax.set_title("Reference and followed tracks")
    return _save(fig, out_path, description)


def plot_y_error(
    traces: Sequence[LabeledTrace],
    out_path,
    monitor: str = "world_y",
    description: str = "",
) -> Path:
    """Monitored y error against the timestep index for every trace."""
    if not traces:
        raise ValueError("no traces to plot")
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, df in traces:
        _check_trace(df, ERROR_COLUMNS, label)
        y = df["y_r"] - df["y_c"] if monitor == "world_y" else df["y_e"]
        ax.plot(df["k"], y, linewidth=1.0, label=label, **_marker_kwargs(df))
    ax.axhline(0.0, color="k", linewidth=0.6, alpha=0.5)
    ax.set_xlabel("timestep k")
    ylabel = "y error [m]" if monitor == "world_y" else "lateral error y_e [m]"
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    ax.set_title("Error convergence")
    return _save(fig, out_path, description)


def plot_velocity(
    traces: Sequence[LabeledTrace],
    out_path,
    nu_max: Optional[float] = None,
    description: str = "",
) -> Path:
    """Commanded translational velocity per timestep, with reference overlay."""
    if not traces:
        raise ValueError("no traces to plot")
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, df in traces:
        _check_trace(df, VELOCITY_COLUMNS, label)
        ax.plot(df["k"], df["nu"], linewidth=1.0, label=label, **_marker_kwargs(df))
    if nu_max is not None:
        ax.axhline(nu_max, color="r", linewidth=0.8, linestyle=":", alpha=0.8)
        ax.axhline(-nu_max, color="r", linewidth=0.8, linestyle=":", alpha=0.8)
    ax.set_xlabel("timestep k")
    ax.set_ylabel("nu [m/s]")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    ax.set_title("Translational velocity")
    return _save(fig, out_path, description)


def plot_stability_heatmap(
    n_ul_values: np.ndarray,
    kx_values: np.ndarray,
    worst_max_magnitude: np.ndarray,
    out_path,
    description: str = "",
) -> Path:
    """Worst-case spectral radius per (n_ul, kx) cell; unit circle contoured."""
    worst = np.asarray(worst_max_magnitude, dtype=float)
    if worst.size == 0:
        raise ValueError("stability map is empty")
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    mesh = ax.pcolormesh(
        np.asarray(kx_values, dtype=float),
        np.asarray(n_ul_values, dtype=float),
        worst,
        shading="nearest",
        cmap="viridis",
    )
    fig.colorbar(mesh, ax=ax, label="worst max |eig|")
    if worst.min() < 1.0 < worst.max() and min(worst.shape) > 1:
        ax.contour(
            np.asarray(kx_values, dtype=float),
            np.asarray(n_ul_values, dtype=float),
            worst,
            levels=[1.0],
            colors="r",
            linewidths=1.2,
        )
    ax.set_xlabel("kx [1/s]")
    ax.set_ylabel("consecutive uplink outages n_ul")
    ax.set_title("Stability map")
    return _save(fig, out_path, description)
