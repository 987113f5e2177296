"""Per-step stability analysis of the closed loop under stale uplink feedback.

The loop linearized about the zero-error equilibrium gives a 3x3 step matrix
whose entries mix the current plant heading with the heading of the last
received state (n_ul samples old). Discrete-time stability is judged per step
from the matrix eigenvalues against the unit circle: every magnitude must lie
strictly between 0 and 1.

The module also carries the continuous-time closed-loop error dynamics and
their Jacobian at zero error; tests use these as an independent cross-check of
the discrete matrix (eigenvalues of the step matrix should approach
1 + ts * eigenvalues of the continuous Jacobian as ts shrinks).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .controller import ErrorVec, Gains, ReferencePoint

DEFAULT_TOL = 1e-9

STABLE = "stable"
MARGINAL = "marginal"
UNSTABLE = "unstable"
CLASS_NAMES = (STABLE, MARGINAL, UNSTABLE)
STABLE_CODE, MARGINAL_CODE, UNSTABLE_CODE = 0, 1, 2


def control_matrix(
    theta_now: Union[float, np.ndarray],
    theta_stale: Union[float, np.ndarray],
    nu_r_stale: Union[float, np.ndarray],
    gains: Gains,
    ts: float,
) -> np.ndarray:
    """Linearized one-step matrix of the closed loop with stale feedback.

    ``theta_now`` is the current plant heading, ``theta_stale`` the heading of
    the last received state and ``nu_r_stale`` the reference translational
    velocity at that stale index. Scalar arguments give a (3, 3) matrix;
    broadcastable arrays give a stacked (..., 3, 3) result. With ``ts = 0``
    the result is the identity.
    """
    if ts < 0.0:
        raise ValueError(f"ts must be >= 0, got {ts}")
    tn = np.asarray(theta_now, dtype=float)
    tsl = np.asarray(theta_stale, dtype=float)
    nu = np.asarray(nu_r_stale, dtype=float)
    shape = np.broadcast_shapes(tn.shape, tsl.shape, nu.shape)
    cn, sn = np.cos(tn), np.sin(tn)
    cs, ss = np.cos(tsl), np.sin(tsl)
    kx, ky, kt = gains.kx, gains.ky, gains.ktheta

    a = np.empty(shape + (3, 3), dtype=float)
    a[..., 0, 0] = 1.0 - ts * kx * cn * cs
    a[..., 0, 1] = -ts * kx * cn * ss
    a[..., 0, 2] = -ts * sn * nu
    a[..., 1, 0] = -ts * kx * sn * cs
    a[..., 1, 1] = 1.0 - ts * kx * sn * ss
    a[..., 1, 2] = ts * cn * nu
    a[..., 2, 0] = ts * ky * ss * nu
    a[..., 2, 1] = -ts * ky * cs * nu
    a[..., 2, 2] = 1.0 - ts * kt * nu
    return a


def characteristic_coefficients(mats: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coefficients (c2, c1, c0) of det(lam*I - A) = lam^3 + c2 lam^2 + c1 lam + c0."""
    b = np.asarray(mats, dtype=float)
    if b.shape[-2:] != (3, 3):
        raise ValueError(f"expected trailing shape (3, 3), got {b.shape}")
    tr = b[..., 0, 0] + b[..., 1, 1] + b[..., 2, 2]
    m2 = (
        b[..., 0, 0] * b[..., 1, 1]
        - b[..., 0, 1] * b[..., 1, 0]
        + b[..., 0, 0] * b[..., 2, 2]
        - b[..., 0, 2] * b[..., 2, 0]
        + b[..., 1, 1] * b[..., 2, 2]
        - b[..., 1, 2] * b[..., 2, 1]
    )
    det = (
        b[..., 0, 0] * (b[..., 1, 1] * b[..., 2, 2] - b[..., 1, 2] * b[..., 2, 1])
        - b[..., 0, 1] * (b[..., 1, 0] * b[..., 2, 2] - b[..., 1, 2] * b[..., 2, 0])
        + b[..., 0, 2] * (b[..., 1, 0] * b[..., 2, 1] - b[..., 1, 1] * b[..., 2, 0])
    )
    return -tr, m2, -det


def _solve_cubic_monic(c2: np.ndarray, c1: np.ndarray, c0: np.ndarray) -> np.ndarray:
    """Roots of lam^3 + c2 lam^2 + c1 lam + c0, vectorized over leading axes.

    Depressed-cubic closed form: trigonometric branch for three real roots,
    Cardano (cancellation-safe cube-root pairing) for one real root plus a
    conjugate pair. Two guarded Newton passes tighten each root; an iterate is
    only kept when it lowers the polynomial residual, so nearly defective
    triples cannot be made worse.
    """
    c2 = np.atleast_1d(np.asarray(c2, dtype=float))
    c1 = np.atleast_1d(np.asarray(c1, dtype=float))
    c0 = np.atleast_1d(np.asarray(c0, dtype=float))
    n = c2.shape[0]

    p = c1 - c2 * c2 / 3.0
    q = (2.0 / 27.0) * c2**3 - c2 * c1 / 3.0 + c0
    half_q = 0.5 * q
    disc = half_q * half_q + (p / 3.0) ** 3

    roots = np.zeros((n, 3), dtype=complex)

    three_real = disc <= 0.0
    trig = three_real & (p < 0.0)
    if trig.any():
        m = 2.0 * np.sqrt(-p[trig] / 3.0)
        arg = np.clip(3.0 * q[trig] / (p[trig] * m), -1.0, 1.0)
        phi = np.arccos(arg) / 3.0
        offsets = np.array([0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0])
        roots[trig] = m[:, None] * np.cos(phi[:, None] - offsets[None, :])

    triple = three_real & ~trig  # p >= 0 with disc <= 0 forces p ~ q ~ 0
    if triple.any():
        roots[triple] = np.cbrt(-q[triple])[:, None]

    one_real = ~three_real
    if one_real.any():
        sq = np.sqrt(disc[one_real])
        u3 = -half_q[one_real] + sq
        v3 = -half_q[one_real] - sq
        big = np.where(np.abs(u3) >= np.abs(v3), u3, v3)
        a = np.cbrt(big)
        b = np.where(a != 0.0, -p[one_real] / (3.0 * a), 0.0)
        real_root = a + b
        re = -0.5 * real_root
        im = (math.sqrt(3.0) / 2.0) * (a - b)
        roots[one_real, 0] = real_root
        roots[one_real, 1] = re + 1j * im
        roots[one_real, 2] = re - 1j * im

    roots -= (c2 / 3.0)[:, None]

    c2c = c2[:, None]
    c1c = c1[:, None]
    c0c = c0[:, None]
    for _ in range(2):
        pv = ((roots + c2c) * roots + c1c) * roots + c0c
        dpv = (3.0 * roots + 2.0 * c2c) * roots + c1c
        safe = np.abs(dpv) > 1e-300
        step = np.where(safe, pv / np.where(safe, dpv, 1.0), 0.0)
        cand = roots - step
        pc = ((cand + c2c) * cand + c1c) * cand + c0c
        roots = np.where(np.abs(pc) < np.abs(pv), cand, roots)
    return roots


def eigenvalues_3x3(mats: np.ndarray, return_info: bool = False):
    """Eigenvalues of one or many 3x3 real matrices, sorted by falling magnitude.

    Uses the guarded closed-form characteristic-cubic solver (no iterative
    linear-algebra dependency on the production path). Input may be a single
    (3, 3) matrix or a stacked (..., 3, 3) array; output is (3,) / (..., 3)
    complex. With ``return_info=True`` a dict with the polished polynomial
    residual and a near-defective flag is returned alongside; near-defective
    spectra are flagged, not failed.
    """
    a = np.asarray(mats, dtype=float)
    if a.shape[-2:] != (3, 3):
        raise ValueError(f"expected trailing shape (3, 3), got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError("matrix entries must be finite")
    lead_shape = a.shape[:-2]
    m = a.reshape(-1, 3, 3)

    scale = np.abs(m).max(axis=(1, 2))
    scale = np.where(scale > 0.0, scale, 1.0)
    b = m / scale[:, None, None]

    c2, c1, c0 = characteristic_coefficients(b)
    roots = _solve_cubic_monic(c2, c1, c0)

    order = np.argsort(-np.abs(roots), axis=1, kind="stable")
    roots = np.take_along_axis(roots, order, axis=1)
    lam = roots * scale[:, None]

    if return_info:
        pv = ((roots + c2[:, None]) * roots + c1[:, None]) * roots + c0[:, None]
        sep = np.minimum(
            np.abs(roots[:, 0] - roots[:, 1]),
            np.minimum(np.abs(roots[:, 1] - roots[:, 2]), np.abs(roots[:, 0] - roots[:, 2])),
        )
        near_defective = sep < 1e-6 * (1.0 + np.abs(roots).max(axis=1))
        info = {
            "max_residual": float(np.abs(pv).max()) if pv.size else 0.0,
            "near_defective": near_defective.reshape(lead_shape) if lead_shape else bool(near_defective[0]),
        }
        return lam.reshape(lead_shape + (3,)), info
    return lam.reshape(lead_shape + (3,))


def classify_magnitudes(mags: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Classification codes from eigenvalue magnitudes of shape (..., 3).

    Precedence: any magnitude above 1 + tol is unstable; otherwise any within
    tol of the unit circle is marginal; otherwise a magnitude at or below tol
    violates the strict lower bound and is classified unstable too; the rest
    are stable. Codes: 0 stable, 1 marginal, 2 unstable.
    """
    if tol < 0.0:
        raise ValueError(f"tol must be >= 0, got {tol}")
    m = np.asarray(mags, dtype=float)
    above = (m > 1.0 + tol).any(axis=-1)
    on_circle = (m >= 1.0 - tol).any(axis=-1)
    near_zero = (m <= tol).any(axis=-1)
    codes = np.full(m.shape[:-1], STABLE_CODE, dtype=np.int8)
    codes[near_zero] = UNSTABLE_CODE
    codes[on_circle & ~above] = MARGINAL_CODE
    codes[above] = UNSTABLE_CODE
    return codes


@dataclass
class StabilityReport:
    """Per-step eigenvalue verdict; k and n_ul are filled by the simulation."""

    eigenvalues: np.ndarray
    max_magnitude: float
    classification: str
    k: Optional[int] = None
    n_ul: Optional[int] = None


def check_stability_step(
    a: np.ndarray,
    tol: float = DEFAULT_TOL,
    k: Optional[int] = None,
    n_ul: Optional[int] = None,
) -> StabilityReport:
    """Eigenvalues of one step matrix and their unit-circle classification."""
    lam = eigenvalues_3x3(a)
    mags = np.abs(lam)
    code = int(classify_magnitudes(mags, tol))
    return StabilityReport(
        eigenvalues=lam,
        max_magnitude=float(mags.max()),
        classification=CLASS_NAMES[code],
        k=k,
        n_ul=n_ul,
    )


def continuous_error_dynamics(err: ErrorVec, ref: ReferencePoint, gains: Gains) -> np.ndarray:
    """Closed-loop error rates: control law substituted into the error dynamics.

        d(x_e)/dt     = omega*y_e - nu + nu_r*cos(theta_e)
        d(y_e)/dt     = -omega*x_e + nu_r*sin(theta_e)
        d(theta_e)/dt = omega_r - omega

    with nu, omega from the feedback law. Zero error is an equilibrium.
    """
    x_e, y_e, theta_e = err
    nu = ref.nu_r * math.cos(theta_e) + gains.kx * x_e
    omega = ref.omega_r + ref.nu_r * (gains.ky * y_e + gains.ktheta * math.sin(theta_e))
    return np.array(
        [
            omega * y_e - nu + ref.nu_r * math.cos(theta_e),
            -omega * x_e + ref.nu_r * math.sin(theta_e),
            ref.omega_r - omega,
        ]
    )


def error_dynamics_jacobian(ref: ReferencePoint, gains: Gains) -> np.ndarray:
    """Jacobian of the closed-loop error rates at zero error.

    Derived symbolically from :func:`continuous_error_dynamics`; tests verify
    it against central finite differences.
    """
    return np.array(
        [
            [-gains.kx, ref.omega_r, 0.0],
            [-ref.omega_r, 0.0, ref.nu_r],
            [0.0, -ref.nu_r * gains.ky, -ref.nu_r * gains.ktheta],
        ]
    )


def hurwitz_check(a: np.ndarray, eps: float = 1e-12, return_detail: bool = False):
    """Routh-array test that every root of det(A - s I) has a negative real part.

    Decided from the characteristic coefficients alone (no root finding). A
    zero pivot is replaced by +eps, the standard workaround, and flagged as
    degenerate in the detail dict; a degenerate array means roots on (or
    symmetric about) the imaginary axis, which is never strictly Hurwitz.
    """
    c2, c1, c0 = characteristic_coefficients(np.asarray(a, dtype=float))
    a2, a1, a0 = float(c2), float(c1), float(c0)
    degenerate = False
    pivot = a2
    if pivot == 0.0:
        pivot = eps
        degenerate = True
    b1 = (pivot * a1 - a0) / pivot
    if b1 == 0.0:
        b1 = eps
        degenerate = True
    first_column = (1.0, pivot, b1, a0)
    stable = all(v > 0.0 for v in first_column) and not degenerate
    if return_detail:
        return stable, {"first_column": first_column, "degenerate": degenerate}
    return stable


@dataclass
class StabilityMap:
    """Grid of worst-case spectral radii over (n_ul, kx) cells."""

    n_ul_values: np.ndarray
    kx_values: np.ndarray
    worst_max_magnitude: np.ndarray  # shape (len(n_ul), len(kx))
    unstable_fraction: np.ndarray  # same shape; fraction of analyzed steps

    def threshold_n_ul(self) -> list:
        """Per kx column: smallest n_ul with any unstable step, or None."""
        out = []
        for j in range(len(self.kx_values)):
            hits = np.flatnonzero(self.unstable_fraction[:, j] > 0.0)
            out.append(int(self.n_ul_values[hits[0]]) if hits.size else None)
        return out

    def to_records(self) -> list:
        rows = []
        for i, n in enumerate(self.n_ul_values):
            for j, kx in enumerate(self.kx_values):
                rows.append(
                    {
                        "n_ul": int(n),
                        "kx": float(kx),
                        "worst_max_eig_mag": float(self.worst_max_magnitude[i, j]),
                        "unstable_step_fraction": float(self.unstable_fraction[i, j]),
                    }
                )
        return rows


def reference_stability_map(
    theta_r: np.ndarray,
    nu_r: np.ndarray,
    gains: Gains,
    ts: float,
    n_ul_values: Sequence[int],
    kx_values: Sequence[float],
    tol: float = DEFAULT_TOL,
) -> StabilityMap:
    """Stability map along an equilibrium reference trajectory.

    At equilibrium the plant pose coincides with the reference, so the step
    matrix for a staleness of n samples pairs the heading at step k with the
    reference heading and velocity at k - n. Each (n_ul, kx) cell reports the
    worst max |eig| over all steps k >= n_ul and the fraction of those steps
    classified unstable. ky and ktheta come from ``gains`` unchanged.
    """
    theta = np.asarray(theta_r, dtype=float)
    nu = np.asarray(nu_r, dtype=float)
    if theta.shape != nu.shape or theta.ndim != 1:
        raise ValueError("theta_r and nu_r must be 1-d arrays of equal length")
    n_vals = np.asarray(list(n_ul_values), dtype=int)
    kx_vals = np.asarray(list(kx_values), dtype=float)
    if n_vals.size == 0 or kx_vals.size == 0:
        raise ValueError("n_ul_values and kx_values must be non-empty")
    if n_vals.min() < 0 or n_vals.max() >= theta.size:
        raise ValueError(
            f"n_ul values must lie in [0, {theta.size - 1}] for this trajectory"
        )

    worst = np.empty((n_vals.size, kx_vals.size))
    frac = np.empty_like(worst)
    for i, n in enumerate(n_vals):
        now = theta[n:]
        stale = theta[: theta.size - n]
        nu_stale = nu[: theta.size - n]
        for j, kx in enumerate(kx_vals):
            g = Gains(kx=float(kx), ky=gains.ky, ktheta=gains.ktheta)
            mats = control_matrix(now, stale, nu_stale, g, ts)
            mags = np.abs(eigenvalues_3x3(mats))
            codes = classify_magnitudes(mags, tol)
            worst[i, j] = mags.max()
            frac[i, j] = float(np.mean(codes == UNSTABLE_CODE))
    return StabilityMap(n_vals, kx_vals, worst, frac)
