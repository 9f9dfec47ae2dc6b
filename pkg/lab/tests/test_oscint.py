"""
Tests for the oscillatory integral module.
"""

import math
from unittest.mock import patch

import numpy as np
import pytest
from app.errors import DegeneratePointError, FitError, RankHypothesisError, UnderResolvedError
from app.oscint import (
    AmplitudeCutoff,
    BoxGrid,
    PhaseFunction,
    assemble_osc_operator,
    distance_phase_hessian_analysis,
    mixed_hessian,
    numerical_rank,
    operator_norm,
    schur_bound,
    stein_sweep,
)
from pydantic import ValidationError


def distance_cutoff(dim: int) -> AmplitudeCutoff:
    radius = (0.1,) + (1.0,) * (dim - 1)
    return AmplitudeCutoff(
        x_center=(0.0,) * dim,
        x_radius=radius,
        xi_center=(1.0,) + (0.0,) * (dim - 1),
        xi_radius=radius,
    )


class TestPhaseFunction:
    """Test cases for phases and mixed Hessians."""

    def test_custom_needs_evaluator(self):
        """Test that custom phases without an evaluator are rejected."""
        with pytest.raises(ValidationError):
            PhaseFunction(family="custom", dim=2)

    def test_kernel_phase_shapes(self):
        """Test that kernel phases have shape (len(Xi), len(X)) for every family."""
        X = np.random.default_rng(0).random((5, 2))
        Xi = np.random.default_rng(1).random((3, 2))
        custom = PhaseFunction(
            family="custom", dim=2, evaluator=lambda a, b: np.sum(a * b, axis=-1)
        )
        bilinear = PhaseFunction(family="bilinear", dim=2)
        np.testing.assert_allclose(custom.kernel_phase(X, Xi), bilinear.kernel_phase(X, Xi))
        distance = PhaseFunction(family="regularized_distance", dim=2, delta=0.3)
        assert distance.kernel_phase(X, Xi)[2, 4] == pytest.approx(
            math.sqrt(np.sum((X[4] - Xi[2]) ** 2) + 0.09)
        )

    def test_bilinear_hessian(self):
        """Test that the bilinear phase has the identity as mixed Hessian."""
        phase = PhaseFunction(family="bilinear", dim=3)
        np.testing.assert_array_equal(mixed_hessian(phase, np.ones(3), np.zeros(3)), np.eye(3))

    def test_central_matches_analytic(self):
        """Test the extrapolated central difference against the closed form."""
        phase = PhaseFunction(family="regularized_distance", dim=2, delta=0.5)
        x, xi = np.array([0.3, 0.1]), np.array([1.0, -0.2])
        analytic = mixed_hessian(phase, x, xi)
        central = mixed_hessian(phase, x, xi, method="central")
        np.testing.assert_allclose(central, analytic, atol=1e-8)

    def test_custom_uses_differences(self):
        """Test that a custom bilinear evaluator gives the identity by differences."""
        phase = PhaseFunction(
            family="custom", dim=2, evaluator=lambda a, b: np.sum(a * b, axis=-1)
        )
        H = mixed_hessian(phase, np.array([0.2, 0.4]), np.array([-0.1, 0.7]), method="central")
        np.testing.assert_allclose(H, np.eye(2), atol=1e-8)

    def test_unknown_method(self):
        """Test that unknown differentiation methods are rejected."""
        phase = PhaseFunction(family="bilinear", dim=1)
        with pytest.raises(ValueError):
            mixed_hessian(phase, [0.0], [1.0], method="forward")

    def test_singular_point(self):
        """Test that the unregularized distance phase is singular at X = Xi."""
        phase = PhaseFunction(family="regularized_distance", dim=2)
        with pytest.raises(DegeneratePointError):
            mixed_hessian(phase, [0.5, 0.5], [0.5, 0.5])


class TestHessianAnalysis:
    """Test cases for rank and determinant of the distance-phase Hessian."""

    def test_numerical_rank(self):
        """Test the relative singular value threshold."""
        assert numerical_rank(np.diag([1.0, 1e-12]))[0] == 1
        assert numerical_rank(np.zeros((2, 2)))[0] == 0

    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    def test_full_rank_with_delta(self, d):
        """Test rank d and det (-1)^d delta^2 phi0^-(d+2) for delta > 0."""
        rng = np.random.default_rng(d)
        x = rng.standard_normal(d)
        step = rng.standard_normal(d)
        step *= 0.8 / np.linalg.norm(step)
        analysis = distance_phase_hessian_analysis(x, x - step, 0.7, d)
        assert analysis.rank == d
        phi0 = math.sqrt(0.64 + 0.49)
        assert analysis.det_analytic == pytest.approx((-1) ** d * 0.49 * phi0 ** (-(d + 2)))
        assert analysis.det_numeric == pytest.approx(analysis.det_analytic, rel=1e-10)
        assert analysis.det_displayed == pytest.approx((-1) ** d * 0.49 / phi0**2)

    @pytest.mark.parametrize("d", [1, 2, 3, 4])
    def test_rank_drop_without_delta(self, d):
        """Test rank d - 1 and the leading minor (-1)^(d-1) omega_d^2 for delta = 0."""
        rng = np.random.default_rng(10 + d)
        x = rng.standard_normal(d)
        x_prime = x - rng.standard_normal(d)
        analysis = distance_phase_hessian_analysis(x, x_prime, 0.0, d)
        assert analysis.rank == d - 1
        assert analysis.det_analytic == 0.0
        assert analysis.leading_minor == pytest.approx(analysis.leading_minor_expected, rel=1e-10)


class TestOperatorAssembly:
    """Test cases for discretized oscillatory operators."""

    def test_box_grid(self):
        """Test midpoint nodes, weights and refinement."""
        grid = BoxGrid([0.0, 1.0], [1.0, 0.5], [4, 2])
        assert len(grid) == 8
        assert np.sum(grid.weights) == pytest.approx(2.0)
        np.testing.assert_allclose(grid.spacing, [0.5, 0.5])
        assert grid.refined().counts == (8, 4)

    def test_operator_norm_weights(self):
        """Test the weighted L2 operator norm of a diagonal kernel."""
        matrix = np.diag([2.0, 1.0])
        assert operator_norm(matrix) == pytest.approx(2.0)
        weighted = operator_norm(matrix, np.array([4.0, 1.0]), np.array([1.0, 1.0]))
        assert weighted == pytest.approx(1.0)

    def test_operator_norm_matches_power_iteration(self):
        """Test the largest singular value of a random matrix against power iteration on A* A."""
        rng = np.random.default_rng(12)
        A = rng.standard_normal((200, 200)) + 1j * rng.standard_normal((200, 200))
        v = np.ones(200, dtype=complex)
        for _ in range(3000):
            v = A.conj().T @ (A @ v)
            v /= np.linalg.norm(v)
        oracle = np.linalg.norm(A @ v)
        assert operator_norm(A) == pytest.approx(oracle, rel=1e-8)

    def test_phase_gauge_invariance(self):
        """Test that adding f(X) + g(Xi) to the phase leaves the operator norm unchanged."""
        cutoff = AmplitudeCutoff.centered(1)
        grid = BoxGrid([0.0], [2.0], [384])
        bilinear = PhaseFunction(family="bilinear", dim=1)

        def gauged(X, Xi):
            return np.sum(X * Xi, axis=-1) + np.sin(X[..., 0]) + Xi[..., 0] ** 2

        custom = PhaseFunction(family="custom", dim=1, evaluator=gauged)
        base = assemble_osc_operator(bilinear, cutoff, 8.0, grid, grid).norm()
        shifted = assemble_osc_operator(custom, cutoff, 8.0, grid, grid).norm()
        assert shifted == pytest.approx(base, rel=1e-10)

    def test_nested_cutoffs_shrink_the_norm(self):
        """Test that a pointwise smaller product cutoff never increases the norm."""
        phase = PhaseFunction(family="regularized_distance", dim=1, delta=0.5)
        grid = BoxGrid([0.0], [2.0], [128])
        norms = [
            assemble_osc_operator(
                phase, AmplitudeCutoff.centered(1, radius), 16.0, grid, grid
            ).norm()
            for radius in (2.0, 1.5, 1.0, 0.5)
        ]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:], strict=False))
        assert norms[-1] < norms[0]

    def test_under_resolved(self):
        """Test that a coarse grid at high lambda raises UnderResolvedError."""
        phase = PhaseFunction(family="bilinear", dim=1)
        cutoff = AmplitudeCutoff.centered(1)
        grid = BoxGrid([0.0], [2.0], [16])
        with pytest.raises(UnderResolvedError):
            assemble_osc_operator(phase, cutoff, 64.0, grid, grid)

    def test_coincident_nodes(self):
        """Test that X = Xi on the support raises DegeneratePointError for delta = 0."""
        phase = PhaseFunction(family="regularized_distance", dim=1)
        cutoff = AmplitudeCutoff.centered(1)
        grid = BoxGrid([0.0], [2.0], [16])
        with pytest.raises(DegeneratePointError):
            assemble_osc_operator(phase, cutoff, 1.0, grid, grid)

    def test_schur_bounds_norm(self):
        """Test that the Schur test bound dominates the operator norm."""
        phase = PhaseFunction(family="bilinear", dim=1)
        cutoff = AmplitudeCutoff.centered(1)
        grid = BoxGrid([0.0], [2.0], [96])
        op = assemble_osc_operator(phase, cutoff, 8.0, grid, grid)
        assert 0 < op.norm() <= schur_bound(op) * (1 + 1e-12)


class TestSteinSweep:
    """Test cases for the lambda^(-p/2) decay sweep."""

    def test_bilinear_one_dimension(self):
        """Test slope -1/2 for the one-dimensional Fourier operator."""
        phase = PhaseFunction(family="bilinear", dim=1)
        report = stein_sweep(phase, AmplitudeCutoff.centered(1), [8, 16, 32])
        assert report.p == 1
        assert not report.separable
        assert report.fit.slope == pytest.approx(-0.5, abs=0.15)
        assert report.upper_bound_holds
        assert report.converged
        assert report.passed
        assert report.convergence_lambdas == [8.0, 16.0, 32.0]
        assert report.convergence_change < 0.01

    def test_bilinear_two_dimensions(self):
        """Test that the 2D Fourier operator factors and decays like lambda^-1."""
        phase = PhaseFunction(family="bilinear", dim=2)
        report = stein_sweep(phase, AmplitudeCutoff.centered(2), [8, 16, 32, 64])
        assert report.separable
        assert report.p == 2
        assert report.fit.slope == pytest.approx(-1.0, abs=0.15)
        assert report.attained

    def test_rank_hypothesis(self):
        """Test that asking for p above the sampled rank raises RankHypothesisError."""
        phase = PhaseFunction(family="regularized_distance", dim=2)
        with pytest.raises(RankHypothesisError):
            stein_sweep(phase, distance_cutoff(2), [8, 16, 32], p=2)

    def test_too_few_lambdas(self):
        """Test that fewer than 3 distinct lambdas raise FitError."""
        phase = PhaseFunction(family="bilinear", dim=1)
        with pytest.raises(FitError):
            stein_sweep(phase, AmplitudeCutoff.centered(1), [8, 8, 16])

    def test_convergence_checked_at_every_lambda(self):
        """Test that an under-resolved largest lambda fails the convergence check."""
        phase = PhaseFunction(family="bilinear", dim=1)
        cutoff = AmplitudeCutoff.centered(1)
        calls = []

        def fake_norm(phase, cutoff, lam, oversampling, min_nodes, separable, refine=False):
            calls.append((lam, refine))
            norm = lam**-0.5
            if refine and lam == 32.0:
                norm *= 1.1
            return norm, 100

        with patch("app.oscint._norm_at", side_effect=fake_norm):
            report = stein_sweep(phase, cutoff, [8, 16, 32])
        assert (8.0, True) in calls
        assert (16.0, True) in calls
        assert (32.0, True) in calls
        assert report.upper_bound_holds
        assert not report.converged
        assert not report.passed
        assert report.convergence_change == pytest.approx(0.1 / 1.1)

    def test_convergence_skips_oversized_refinements(self):
        """Test that lambdas whose refined kernel is too large are left out of the check."""
        phase = PhaseFunction(family="bilinear", dim=1)
        with patch("app.oscint.REFINED_ENTRY_LIMIT", 200_000):
            report = stein_sweep(phase, AmplitudeCutoff.centered(1), [8, 16, 32])
        assert report.convergence_lambdas == [8.0, 16.0]
        assert report.converged

    @pytest.mark.slow
    def test_distance_phase_rank_one(self):
        """Test that the unregularized distance phase in 2D decays like lambda^-1/2."""
        phase = PhaseFunction(family="regularized_distance", dim=2)
        report = stein_sweep(phase, distance_cutoff(2), [8, 16, 32], check_convergence=False)
        assert report.min_sampled_rank == 1
        assert report.p == 1
        assert report.upper_bound_holds
        assert report.fit.slope < -0.3
