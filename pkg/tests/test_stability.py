import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cloudagv.controller import ErrorVec, Gains, ReferencePoint
from cloudagv.kinematics import Pose
from cloudagv.stability import (
    MARGINAL,
    STABLE,
    UNSTABLE,
    check_stability_step,
    classify_magnitudes,
    continuous_error_dynamics,
    control_matrix,
    eigenvalues_3x3,
    error_dynamics_jacobian,
    hurwitz_check,
    reference_stability_map,
)

GAINS = Gains(kx=25.0, ky=64.0, ktheta=16.0)


def control_matrix_oracle(theta_now, theta_stale, nu_r_stale, gains, ts):
    """Independent symbolic substitution of the linearized step matrix."""
    import sympy as sp

    tn, tsl, nu, kx, ky, kt, h = sp.symbols("tn tsl nu kx ky kt h")
    rows = sp.Matrix(
        [
            [
                1 - h * kx * sp.cos(tn) * sp.cos(tsl),
                -h * kx * sp.cos(tn) * sp.sin(tsl),
                -h * sp.sin(tn) * nu,
            ],
            [
                -h * kx * sp.sin(tn) * sp.cos(tsl),
                1 - h * kx * sp.sin(tn) * sp.sin(tsl),
                h * sp.cos(tn) * nu,
            ],
            [
                h * ky * sp.sin(tsl) * nu,
                -h * ky * sp.cos(tsl) * nu,
                1 - h * kt * nu,
            ],
        ]
    )
    subs = {
        tn: theta_now,
        tsl: theta_stale,
        nu: nu_r_stale,
        kx: gains.kx,
        ky: gains.ky,
        kt: gains.ktheta,
        h: ts,
    }
    return np.array(rows.subs(subs).evalf(), dtype=float)


def match_eigensets(got, want):
    """Greedy nearest matching; returns the worst relative mismatch."""
    want = list(want)
    worst = 0.0
    used = [False] * len(want)
    for lam in got:
        dists = [abs(lam - w) if not used[i] else math.inf for i, w in enumerate(want)]
        i = int(np.argmin(dists))
        used[i] = True
        worst = max(worst, dists[i] / max(1.0, abs(want[i])))
    return worst


class TestControlMatrix:
    def test_aligned_zero_velocity(self):
        a = control_matrix(0.0, 0.0, 0.0, GAINS, 0.005)
        expected = np.diag([1 - 0.005 * 25.0, 1.0, 1.0])
        np.testing.assert_allclose(a, expected, atol=1e-15)

    def test_zero_ts_is_identity(self):
        a = control_matrix(0.9, -0.4, 3.0, GAINS, 0.0)
        np.testing.assert_allclose(a, np.eye(3), atol=1e-15)

    def test_against_symbolic_oracle(self):
        cases = [
            (math.pi / 2, math.pi / 2, 1.0),
            (0.3, -0.8, 2.5),
            (-2.9, 2.9, 0.1),
        ]
        for tn, tsl, nu in cases:
            got = control_matrix(tn, tsl, nu, GAINS, 0.005)
            want = control_matrix_oracle(tn, tsl, nu, GAINS, 0.005)
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(3)
        tn = rng.uniform(-3, 3, 16)
        tsl = rng.uniform(-3, 3, 16)
        nu = rng.uniform(0, 4, 16)
        stacked = control_matrix(tn, tsl, nu, GAINS, 0.005)
        assert stacked.shape == (16, 3, 3)
        for i in range(16):
            single = control_matrix(tn[i], tsl[i], nu[i], GAINS, 0.005)
            np.testing.assert_allclose(stacked[i], single, atol=1e-15)


class TestEigenvalues3x3:
    def test_identity(self):
        lam = eigenvalues_3x3(np.eye(3))
        np.testing.assert_allclose(lam, [1, 1, 1], atol=1e-12)

    def test_diagonal(self):
        lam = eigenvalues_3x3(np.diag([3.0, -1.0, 0.5]))
        np.testing.assert_allclose(sorted(lam.real), [-1.0, 0.5, 3.0], atol=1e-12)
        np.testing.assert_allclose(lam.imag, 0.0, atol=1e-12)

    def test_sorted_by_descending_magnitude(self):
        lam = eigenvalues_3x3(np.diag([0.1, -5.0, 2.0]))
        mags = np.abs(lam)
        assert mags[0] >= mags[1] >= mags[2]

    def test_complex_pair(self):
        # rotation by 90 degrees in a 2x2 block: eigenvalues 1, +/- i
        a = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        lam = eigenvalues_3x3(a)
        worst = match_eigensets(lam, [1.0, 1j, -1j])
        assert worst < 1e-12

    def test_thousand_random_vs_iterative_oracle(self):
        rng = np.random.default_rng(7)
        mats = rng.normal(size=(1000, 3, 3))
        mine = eigenvalues_3x3(mats)
        worst = 0.0
        for i in range(1000):
            worst = max(worst, match_eigensets(mine[i], np.linalg.eigvals(mats[i])))
        assert worst < 1e-7

    def test_product_and_sum_invariants(self):
        rng = np.random.default_rng(11)
        mats = rng.normal(size=(500, 3, 3))
        lam = eigenvalues_3x3(mats)
        det = np.linalg.det(mats)
        tr = np.trace(mats, axis1=1, axis2=2)
        prod = np.prod(lam, axis=1)
        assert np.max(np.abs(prod - det) / np.maximum(np.abs(det), 1e-12)) < 1e-7
        assert np.max(np.abs(np.sum(lam, axis=1) - tr)) < 1e-9

    def test_characteristic_residual_small(self):
        rng = np.random.default_rng(13)
        mats = rng.normal(size=(200, 3, 3))
        _, info = eigenvalues_3x3(mats, return_info=True)
        assert info["max_residual"] < 1e-8

    def test_near_defective_flagged_not_failed(self):
        a = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]])
        lam, info = eigenvalues_3x3(a, return_info=True)
        assert bool(info["near_defective"])
        worst = match_eigensets(lam, [1.0, 1.0, 2.0])
        assert worst < 1e-5

    def test_scaling_guard(self):
        a = 1e150 * np.diag([1.0, 2.0, 3.0])
        lam = eigenvalues_3x3(a)
        np.testing.assert_allclose(sorted(lam.real), [1e150, 2e150, 3e150], rtol=1e-10)

    def test_rejects_nonfinite(self):
        a = np.eye(3)
        a[0, 0] = np.nan
        with pytest.raises(ValueError):
            eigenvalues_3x3(a)


class TestClassification:
    def test_all_inside_is_stable(self):
        report = check_stability_step(np.diag([0.9, 0.8, 0.7]))
        assert report.classification == STABLE
        assert report.max_magnitude == pytest.approx(0.9)

    def test_identity_is_marginal(self):
        assert check_stability_step(np.eye(3)).classification == MARGINAL

    def test_outside_is_unstable(self):
        assert check_stability_step(np.diag([1.05, 0.5, 0.5])).classification == UNSTABLE

    def test_zero_eigenvalue_violates_lower_bound(self):
        # strict 0 < |eig| is enforced as stated
        assert check_stability_step(np.diag([0.0, 0.5, 0.5])).classification == UNSTABLE

    def test_unstable_beats_marginal(self):
        codes = classify_magnitudes(np.array([1.0, 1.5, 0.5]))
        assert codes == 2

    def test_vectorized_codes(self):
        mags = np.array([[0.9, 0.5, 0.1], [1.0, 0.5, 0.5], [2.0, 0.5, 0.5]])
        np.testing.assert_array_equal(classify_magnitudes(mags), [0, 1, 2])


class TestContinuousErrorDynamics:
    def test_equilibrium(self):
        ref = ReferencePoint(Pose(0, 0, 0), 1.0, 0.2)
        rate = continuous_error_dynamics(ErrorVec(0, 0, 0), ref, GAINS)
        np.testing.assert_allclose(rate, 0.0, atol=1e-15)

    def test_pure_lateral_error_rates(self):
        # with only y_e and omega_r = 0 the closed loop gives
        # x_e-rate = nu_r*ky*y_e^2 and theta_e-rate = -nu_r*ky*y_e
        nu_r, y_e = 1.7, 0.25
        ref = ReferencePoint(Pose(0, 0, 0), nu_r, 0.0)
        rate = continuous_error_dynamics(ErrorVec(0.0, y_e, 0.0), ref, GAINS)
        assert rate[0] == pytest.approx(nu_r * GAINS.ky * y_e**2)
        assert rate[2] == pytest.approx(-nu_r * GAINS.ky * y_e)

    def test_small_error_matches_linearization(self):
        ref = ReferencePoint(Pose(0, 0, 0), 1.2, 0.3)
        a = error_dynamics_jacobian(ref, GAINS)
        rng = np.random.default_rng(2)
        # remainder constant is set by the gain scale (~nu_r*ky here)
        for _ in range(20):
            eps = rng.normal(scale=1e-5, size=3)
            rate = continuous_error_dynamics(ErrorVec(*eps), ref, GAINS)
            lin = a @ eps
            bound = 2.0 * ref.nu_r * GAINS.ky * np.linalg.norm(eps) ** 2 + 1e-12
            assert np.linalg.norm(rate - lin) < bound


class TestErrorDynamicsJacobian:
    def test_rest_reference_only_kx(self):
        j = error_dynamics_jacobian(ReferencePoint(Pose(0, 0, 0), 0.0, 0.0), GAINS)
        expected = np.zeros((3, 3))
        expected[0, 0] = -GAINS.kx
        np.testing.assert_allclose(j, expected, atol=1e-15)

    @pytest.mark.parametrize("nu_r,omega_r", [(1.0, 0.0), (2.0, 0.5), (0.4, -1.1)])
    def test_matches_central_finite_differences(self, nu_r, omega_r):
        ref = ReferencePoint(Pose(0, 0, 0), nu_r, omega_r)
        j = error_dynamics_jacobian(ref, GAINS)
        h = 1e-6
        fd = np.zeros((3, 3))
        for col in range(3):
            e = np.zeros(3)
            e[col] = h
            fp = continuous_error_dynamics(ErrorVec(*e), ref, GAINS)
            fm = continuous_error_dynamics(ErrorVec(*(-e)), ref, GAINS)
            fd[:, col] = (fp - fm) / (2 * h)
        rel = np.abs(j - fd) / np.maximum(1.0, np.abs(j))
        assert rel.max() < 1e-6

    @given(
        st.floats(0.1, 5.0),
        st.floats(-2.0, 2.0),
        st.floats(1.0, 300.0),
        st.floats(1.0, 200.0),
        st.floats(1.0, 50.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_forward_motion_always_hurwitz(self, nu_r, omega_r, kx, ky, ktheta):
        ref = ReferencePoint(Pose(0, 0, 0), nu_r, omega_r)
        g = Gains(kx=kx, ky=ky, ktheta=ktheta)
        a = error_dynamics_jacobian(ref, g)
        assert hurwitz_check(a)
        assert bool((np.linalg.eigvals(a).real < 0).all())


class TestHurwitzCheck:
    def test_stable_diagonal(self):
        assert hurwitz_check(np.diag([-1.0, -2.0, -3.0]))

    def test_unstable_diagonal(self):
        assert not hurwitz_check(np.diag([1.0, -1.0, -1.0]))

    def test_degenerate_row_flagged(self):
        # pure oscillator block: roots on the imaginary axis degenerate the array
        a = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
        stable, detail = hurwitz_check(a, return_detail=True)
        assert detail["degenerate"]
        assert not stable

    def test_thousand_random_agree_with_eigenvalue_signs(self):
        rng = np.random.default_rng(17)
        agree = 0
        for _ in range(1000):
            a = rng.normal(size=(3, 3))
            real_parts = np.linalg.eigvals(a).real
            # skip samples too close to the imaginary axis to call either way
            if np.abs(real_parts).min() < 1e-9:
                agree += 1
                continue
            agree += hurwitz_check(a) == bool((real_parts < 0).all())
        assert agree == 1000


class TestDiscreteContinuousConsistency:
    def test_eigenvalues_approach_continuous_linearization(self):
        # on a circular reference with no staleness, eigenvalues of the step
        # matrix approach 1 + ts * (continuous eigenvalues), linearly in ts
        nu_r, omega_r, theta = 2.0, 2.0, 0.7
        ref = ReferencePoint(Pose(0, 0, theta), nu_r, omega_r)
        lam_c = np.linalg.eigvals(error_dynamics_jacobian(ref, GAINS))
        mismatches = []
        for ts in (0.005, 0.0025, 0.00125):
            a = control_matrix(theta, theta, nu_r, GAINS, ts)
            lam_d = eigenvalues_3x3(a)
            predicted = 1.0 + ts * lam_c
            worst = 0.0
            used = [False] * 3
            for lam in lam_d:
                d = [abs(lam - p) if not used[i] else math.inf for i, p in enumerate(predicted)]
                i = int(np.argmin(d))
                used[i] = True
                worst = max(worst, d[i])
            mismatches.append(worst)
        for coarse, fine in zip(mismatches, mismatches[1:]):
            assert 0.3 <= fine / coarse <= 0.7  # halving ts halves the mismatch


class TestReferenceStabilityMap:
    def setup_method(self):
        n = 400
        ts = 0.005
        omega_r = 2.0
        self.theta = (np.arange(n + 1) * ts * omega_r + math.pi) % (2 * math.pi) - math.pi
        self.nu = np.full(n + 1, 2.0)
        self.ts = ts

    def test_zero_staleness_row_stable(self):
        res = reference_stability_map(self.theta, self.nu, GAINS, self.ts, [0], [5.0, 25.0])
        assert (res.worst_max_magnitude < 1.0).all()
        assert (res.unstable_fraction == 0.0).all()

    def test_rejects_empty_grid(self):
        with pytest.raises(ValueError):
            reference_stability_map(self.theta, self.nu, GAINS, self.ts, [], [25.0])

    def test_rejects_staleness_beyond_trajectory(self):
        with pytest.raises(ValueError):
            reference_stability_map(self.theta, self.nu, GAINS, self.ts, [10_000], [25.0])

    def test_threshold_reporting(self):
        res = reference_stability_map(
            self.theta, self.nu, GAINS, self.ts, list(range(0, 201, 10)), [250.0]
        )
        thr = res.threshold_n_ul()[0]
        assert thr is not None and thr > 0
        row = list(res.n_ul_values).index(thr)
        assert res.unstable_fraction[row, 0] > 0.0
        assert (res.unstable_fraction[:row, 0] == 0.0).all()
