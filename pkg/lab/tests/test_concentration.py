"""
Tests for the concentration module.
"""

import math

import numpy as np
import pytest
from app.concentration import (
    CodimExponent,
    ConcentrationSample,
    alpha_sweep,
    certify_samples,
    projector_concentration_check,
    sphere_saturation_check,
    theorem1_check,
    tube_norm,
)
from app.geometry import ManifoldModel, SubmanifoldSpec, Tube, TubeQuadrature, build_grid
from app.spectral import (
    ExplicitEigenfunction,
    ModeVector,
    highest_weight_tube_mass,
    torus_basis,
)
from pydantic import ValidationError

ALPHAS = (0.0625, 0.125, 0.25, 0.5)


class TestCodimExponent:
    """Test cases for the codimension exponent and weight."""

    def test_hypersurface(self):
        """Test sigma = 1/2 in codimension 1."""
        codim = CodimExponent(k=1, n=2)
        assert codim.sigma == 0.5
        assert not codim.log_correction
        assert codim.weight(0.25) == pytest.approx(0.5)

    def test_codim_two_log_weight(self):
        """Test the alpha log(1/alpha) weight in codimension 2."""
        codim = CodimExponent(k=1, n=3)
        assert codim.sigma == 1.0
        assert codim.log_correction
        assert codim.weight(0.5) == pytest.approx(0.5 * math.log(2.0))
        with pytest.raises(ValueError):
            codim.weight(1.0)

    def test_high_codim(self):
        """Test sigma = 1 without log in codimension 3."""
        codim = CodimExponent(k=1, n=4)
        assert codim.sigma == 1.0
        assert codim.weight(0.3) == pytest.approx(0.3)

    def test_invalid_range(self):
        """Test that k must lie in [1, n-1]."""
        with pytest.raises(ValidationError):
            CodimExponent(k=0, n=2)
        with pytest.raises(ValidationError):
            CodimExponent(k=2, n=2)


class TestPlaneWave:
    """Test cases for tube norms of a torus plane wave."""

    def setup_method(self):
        """Set up the mode (0, 8) on the unit 2-torus and the strip {x1 = 0}."""
        self.manifold = ManifoldModel.torus(2)
        self.basis = torus_basis(self.manifold, 8)
        self.psi = ModeVector.from_modes(self.basis, {(0, 8): 1.0})
        self.h = 1.0 / (16 * math.pi)
        self.strip = SubmanifoldSpec.subtorus((True, False))
        self.grid = TubeQuadrature(self.manifold, (8, 40))

    def test_tube_norm_exact(self):
        """Test ||psi||^2 over the strip equals its width 2 alpha sqrt(h)."""
        tube = Tube(submanifold=self.strip, alpha=0.25, h=self.h)
        value = tube_norm(self.psi, tube, self.grid)
        assert value**2 == pytest.approx(2 * 0.25 * math.sqrt(self.h), rel=1e-12)

    def test_callable_on_full_grid(self):
        """Test that a vectorized callable is integrated with the indicator rule."""
        tube = Tube(submanifold=self.strip, alpha=1.0, h=0.04)
        grid = build_grid(self.manifold, (400, 4))
        value = tube_norm(lambda nodes: np.ones(nodes.shape[0]), tube, grid)
        assert value**2 == pytest.approx(0.4, abs=6e-3)

    def test_theorem1_certificate(self):
        """Test the minimal admissible C sqrt(2) h^(1/4) and the exponents."""
        report = theorem1_check(self.psi, self.h, self.strip, ALPHAS, self.grid)
        assert report.passed
        assert not report.degenerate
        assert report.minimal_C == pytest.approx(math.sqrt(2) * self.h**0.25, rel=1e-10)
        assert report.fits[0].slope == pytest.approx(0.5, abs=1e-10)
        assert report.squared_fit.slope == pytest.approx(1.0, abs=1e-10)
        assert all(s.residual_norm < 1e-12 for s in report.samples)

    def test_c_max_enforced(self):
        """Test that a too small C bound fails the certificate."""
        report = theorem1_check(self.psi, self.h, self.strip, ALPHAS, self.grid, c_max=0.1)
        assert not report.passed

    def test_certificate_invariant_under_scaling(self):
        """Test that multiplying psi by a scalar leaves C, the exponents and the verdict alone."""
        base = theorem1_check(self.psi, self.h, self.strip, ALPHAS, self.grid, c_max=1.0)
        scaled = theorem1_check(
            self.psi.scaled(-3.5j), self.h, self.strip, ALPHAS, self.grid, c_max=1.0
        )
        assert scaled.passed == base.passed
        assert scaled.minimal_C == pytest.approx(base.minimal_C, rel=1e-12)
        assert scaled.fits[0].slope == pytest.approx(base.fits[0].slope, abs=1e-12)
        tight = theorem1_check(
            self.psi.scaled(10.0), self.h, self.strip, ALPHAS, self.grid, c_max=0.1
        )
        assert not tight.passed

    def test_alpha_sweep_validation(self):
        """Test that empty or out-of-range alpha grids are rejected."""
        with pytest.raises(ValueError):
            alpha_sweep(self.psi, self.h, self.strip, [], self.grid)
        with pytest.raises(ValueError):
            alpha_sweep(self.psi, self.h, self.strip, [0.5, 1.5], self.grid)

    def test_alpha_sweep_sorted(self):
        """Test that samples come back in increasing alpha."""
        samples = alpha_sweep(self.psi, self.h, self.strip, [0.5, 0.125, 0.25], self.grid)
        assert [s.alpha for s in samples] == [0.125, 0.25, 0.5]


class TestCertifySamples:
    """Test cases for attaching bounds to samples."""

    def test_zero_field_is_degenerate(self):
        """Test that an all-zero sweep passes trivially with C = 0."""
        samples = [
            ConcentrationSample(alpha=a, h=0.01, tube_norm=0.0, full_norm=0.0) for a in ALPHAS
        ]
        report = certify_samples(samples, CodimExponent(k=1, n=2), 0.01)
        assert report.degenerate
        assert report.passed
        assert report.minimal_C == 0.0
        assert report.fits == []

    def test_residual_enters_bound(self):
        """Test that the bound uses ||psi|| + ||g|| / h."""
        samples = [
            ConcentrationSample(
                alpha=0.25, h=0.1, tube_norm=0.5, full_norm=1.0, residual_norm=0.1
            )
        ]
        report = certify_samples(samples, CodimExponent(k=1, n=2), 0.1)
        assert report.samples[0].bound_rhs == pytest.approx(0.5 * 2.0)
        assert report.minimal_C == pytest.approx(0.5)


class TestProjectorCheck:
    """Test cases for the spectral projector estimate."""

    def test_random_fields(self):
        """Test the projector certificate at lambda = 64 on T^2."""
        manifold = ManifoldModel.torus(2)
        basis = torus_basis(manifold, 10)
        report = projector_concentration_check(
            basis,
            64.0,
            SubmanifoldSpec.subtorus((True, False)),
            ALPHAS,
            TubeQuadrature(manifold, (16, 24)),
            trials=3,
            seed=5,
        )
        assert report.window_modes == 16
        assert len(report.trials) == 3
        assert report.passed
        assert math.isfinite(report.worst_C)
        assert report.sigma == 0.5

    def test_zero_projection_passes(self):
        """Test that a field with no energy in the window is degenerate."""
        manifold = ManifoldModel.torus(2)
        basis = torus_basis(manifold, 10)
        u = ModeVector.from_modes(basis, {(1, 0): 1.0})
        report = projector_concentration_check(
            basis,
            64.0,
            SubmanifoldSpec.subtorus((True, False)),
            ALPHAS,
            TubeQuadrature(manifold, (16, 24)),
            fields=[u],
        )
        assert report.trials[0].degenerate
        assert report.worst_C == 0.0
        assert report.min_slope is None
        assert report.exponent_consistent
        assert report.passed

    def test_c_max_gates_the_certificate(self):
        """Test that a worst C above c_max fails the projector check."""
        manifold = ManifoldModel.torus(2)
        basis = torus_basis(manifold, 10)
        args = (basis, 64.0, SubmanifoldSpec.subtorus((True, False)), ALPHAS)
        grid = TubeQuadrature(manifold, (16, 24))
        loose = projector_concentration_check(*args, grid, trials=2, seed=5)
        assert loose.contraction
        assert loose.worst_C > 0
        tight = projector_concentration_check(
            *args, grid, trials=2, seed=5, c_max=0.5 * loose.worst_C
        )
        assert tight.worst_C == loose.worst_C
        assert not tight.passed
        roomy = projector_concentration_check(
            *args, grid, trials=2, seed=5, c_max=2.0 * loose.worst_C
        )
        assert roomy.passed


class TestExplicitTubeNorm:
    """Test cases for tube norms of explicit sphere eigenfunctions."""

    def test_highest_weight_matches_refined_grid(self):
        """Test the degree-100 highest-weight tube norm on a refined grid and in closed form."""
        psi = ExplicitEigenfunction(family="highest_weight", j=100)
        sphere = ManifoldModel.sphere(2)
        tube = Tube(submanifold=SubmanifoldSpec.great_subsphere(), alpha=0.5, h=1.0 / psi.frequency)
        coarse = tube_norm(psi, tube, TubeQuadrature(sphere, (12, 8)))
        fine = tube_norm(psi, tube, TubeQuadrature(sphere, (48, 32)))
        assert coarse == pytest.approx(fine, rel=1e-2)
        exact = math.sqrt(highest_weight_tube_mass(100, 2, 1, tube.half_width)) * psi.normalization
        assert fine == pytest.approx(exact, rel=1e-6)


@pytest.mark.slow
class TestSphereSaturation:
    """Test cases for saturation on spheres."""

    def test_equator_highest_weight(self):
        """Test squared tube norms of highest-weight harmonics scale like alpha."""
        report = sphere_saturation_check([64, 128, 256])
        assert report.passed
        for j in (64, 128, 256):
            assert report.squared_fits[j].slope == pytest.approx(1.0, abs=0.15)
            assert report.minimal_C[j] == pytest.approx(1.06, abs=0.1)
        assert report.C_spread < 2.0

    def test_closed_form_on_s3(self):
        """Test the closed-form tube mass path for a great 2-sphere in S^3."""
        report = sphere_saturation_check([64, 128, 256], n=3, k=2)
        assert report.passed
        assert report.squared_fits[128].slope == pytest.approx(1.0, abs=0.15)

    def test_zonal_poles(self):
        """Test that ||f_j||^2 / h over caps of width h stays bounded below."""
        report = sphere_saturation_check([64, 128, 256], regime="alpha_equals_sqrt_h")
        assert report.verdicts["ratio_positive"]
        assert report.verdicts["ratio_stable"]
        assert report.ratio_min > 0.5
        assert all(row.ratio is not None for row in report.rows)

    def test_unknown_regime(self):
        """Test that unknown regimes raise ValueError."""
        with pytest.raises(ValueError):
            sphere_saturation_check([8], regime="bogus")
