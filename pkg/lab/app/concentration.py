"""
Concentration module for the tube concentration lab.
Tube norms of modes and quasimodes, alpha sweeps, and the certificates for the
quasimode tube estimate, the spectral projector estimate and sphere saturation.
"""

import logging
import math
from collections.abc import Callable, Sequence
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from app.errors import FitError
from app.geometry import QuadratureGrid, SubmanifoldSpec, Tube, TubeQuadrature
from app.parallel import map_ordered
from app.scaling import ScalingFit, fit_power_law
from app.spectral import (
    ExplicitEigenfunction,
    ModeVector,
    SpectralBasis,
    WindowSpec,
    helmholtz_residual,
    highest_weight_tube_mass,
    window_project,
)

logger = logging.getLogger(__name__)

Evaluable = ModeVector | ExplicitEigenfunction | Callable[[np.ndarray], np.ndarray]
Grid = QuadratureGrid | TubeQuadrature

DEFAULT_ALPHAS = (0.0625, 0.125, 0.25, 0.5)


class ConcentrationSample(BaseModel):
    alpha: float
    h: float
    tube_norm: float
    full_norm: float
    residual_norm: float = 0.0
    bound_rhs: float | None = None
    admissible_C: float | None = None


class CodimExponent(BaseModel):
    """Concentration exponent of a k-dimensional submanifold of an n-manifold."""

    model_config = ConfigDict(frozen=True)

    k: int
    n: int

    @model_validator(mode="after")
    def _check_range(self):
        if not 1 <= self.k <= self.n - 1:
            raise ValueError(f"need 1 <= k <= n-1, got k={self.k}, n={self.n}")
        return self

    @property
    def sigma(self) -> float:
        return 0.5 if self.k == self.n - 1 else 1.0

    @property
    def log_correction(self) -> bool:
        return self.k == self.n - 2

    def weight(self, alpha: float) -> float:
        """alpha^sigma, or alpha log(1/alpha) in codimension 2."""
        if self.log_correction:
            if alpha >= 1.0:
                raise ValueError("the codimension-2 weight alpha*log(1/alpha) needs alpha < 1")
            return alpha * math.log(1.0 / alpha)
        return alpha**self.sigma


def _values(u: Evaluable, nodes: np.ndarray) -> np.ndarray:
    if isinstance(u, ModeVector | ExplicitEigenfunction):
        return u.evaluate(nodes)
    return np.asarray(u(nodes))


def full_norm(u: Evaluable, grid: Grid | None = None) -> float:
    """L2 norm over the whole manifold, by Parseval or closed form where available."""
    if isinstance(u, ModeVector):
        return u.norm()
    if isinstance(u, ExplicitEigenfunction):
        return u.norm()
    g = grid.full_grid()
    return float(np.sqrt(np.sum(g.weights * np.abs(_values(u, g.nodes)) ** 2)))


def residual_norm(u: Evaluable, h: float) -> float:
    """||(h^2 Laplacian + 1) u||; callables are taken to be exact eigenfunctions."""
    if isinstance(u, ModeVector):
        return helmholtz_residual(u, h).norm()
    if isinstance(u, ExplicitEigenfunction):
        return abs(1.0 - h * h * u.eigenvalue) * u.norm()
    return 0.0


def tube_norm(u: Evaluable, tube: Tube, grid: Grid) -> float:
    """
    L2 norm of u over a tube.

    Args:
        u: ModeVector, explicit eigenfunction or vectorized callable
        tube: Tube around a submanifold
        grid: Whole-manifold grid resolving the tube, or a tube-adapted quadrature

    Returns:
        Quadrature value of ||u||_{L2(tube)}
    """
    g = grid.grid_for(tube)
    mask = g.tube_mask(tube)
    if not np.any(mask):
        return 0.0
    values = _values(u, g.nodes[mask])
    return float(np.sqrt(np.sum(g.weights[mask] * np.abs(values) ** 2)))


def alpha_sweep(
    u: Evaluable,
    h: float,
    submanifold: SubmanifoldSpec,
    alphas: Sequence[float],
    grid: Grid,
) -> list[ConcentrationSample]:
    """One ConcentrationSample per alpha, in increasing alpha."""
    alphas = sorted(float(a) for a in alphas)
    if not alphas:
        raise ValueError("alpha grid is empty")
    if alphas[0] <= 0 or alphas[-1] > 1:
        raise ValueError(f"alphas must lie in (0, 1], got {alphas}")
    total = full_norm(u, grid)
    residual = residual_norm(u, h)

    def sample(alpha: float) -> ConcentrationSample:
        tube = Tube(submanifold=submanifold, alpha=alpha, h=h)
        return ConcentrationSample(
            alpha=alpha,
            h=h,
            tube_norm=tube_norm(u, tube, grid),
            full_norm=total,
            residual_norm=residual,
        )

    return map_ordered(sample, alphas)


def _fits(alphas: list[float], values: list[float], log_model: bool) -> list[ScalingFit]:
    if len(alphas) < 3 or min(values) <= 0:
        return []
    fits = [fit_power_law(alphas, values, "pure_power")]
    if log_model and max(alphas) < 1:
        fits.append(fit_power_law(alphas, values, "power_times_log"))
    return fits


class TubeEstimateReport(BaseModel):
    """Certificate for ||psi||_{tube} <= C w(alpha) (||psi|| + ||g|| / h) over an alpha sweep."""

    h: float
    n: int
    k: int
    sigma: float
    log_correction: bool
    samples: list[ConcentrationSample]
    fits: list[ScalingFit]
    squared_fit: ScalingFit | None
    minimal_C: float
    degenerate: bool
    passed: bool


def certify_samples(
    samples: list[ConcentrationSample],
    codim: CodimExponent,
    h: float,
    c_max: float | None = None,
) -> TubeEstimateReport:
    """Attach bound and admissible C to each sample and fit the tube-norm exponents."""
    certified = []
    for s in samples:
        rhs = codim.weight(s.alpha) * (s.full_norm + s.residual_norm / h)
        admissible = s.tube_norm / rhs if rhs > 0 else 0.0
        certified.append(s.model_copy(update={"bound_rhs": rhs, "admissible_C": admissible}))

    degenerate = all(s.full_norm == 0.0 for s in certified)
    minimal_C = max((s.admissible_C for s in certified), default=0.0)
    alphas = [s.alpha for s in certified]
    norms = [s.tube_norm for s in certified]
    fits = [] if degenerate else _fits(alphas, norms, codim.log_correction)
    squared = [] if degenerate else _fits(alphas, [v * v for v in norms], False)
    passed = math.isfinite(minimal_C) and (c_max is None or minimal_C <= c_max)
    return TubeEstimateReport(
        h=h,
        n=codim.n,
        k=codim.k,
        sigma=codim.sigma,
        log_correction=codim.log_correction,
        samples=certified,
        fits=fits,
        squared_fit=squared[0] if squared else None,
        minimal_C=minimal_C,
        degenerate=degenerate,
        passed=passed,
    )


def theorem1_check(
    psi: Evaluable,
    h: float,
    submanifold: SubmanifoldSpec,
    alphas: Sequence[float],
    grid: Grid,
    c_max: float | None = None,
) -> TubeEstimateReport:
    """
    Certify the quasimode tube estimate on an alpha sweep.

    The residual g = (h^2 Laplacian + 1) psi enters the bound as ||g|| / h. The minimal
    admissible C is the largest ratio tube_norm / (w(alpha)(||psi|| + ||g|| / h)).
    """
    codim = CodimExponent(k=submanifold.dim, n=submanifold.ambient_dim)
    samples = alpha_sweep(psi, h, submanifold, alphas, grid)
    report = certify_samples(samples, codim, h, c_max)
    slope = report.fits[0].slope if report.fits else None
    logger.info(f"Tube estimate at h={h:.4g}: minimal C={report.minimal_C:.4g}, slope={slope}")
    return report


class ProjectorReport(BaseModel):
    center: float
    sigma: float
    trials: list[TubeEstimateReport]
    window_modes: int
    worst_C: float
    min_slope: float | None
    exponent_tolerance: float
    exponent_consistent: bool
    contraction: bool = True
    c_max: float | None = None
    passed: bool


def projector_concentration_check(
    basis: SpectralBasis,
    center: float,
    submanifold: SubmanifoldSpec,
    alphas: Sequence[float],
    grid: Grid,
    trials: int = 20,
    seed: int = 0,
    fields: list[ModeVector] | None = None,
    exponent_tolerance: float = 0.1,
    c_max: float | None = None,
) -> ProjectorReport:
    """
    Certify ||Pi_lambda u||_{tube} <= C alpha^sigma ||u|| with h = 1/lambda.

    Random fields use complex Gaussian coefficients from default_rng((seed, trial)).
    A field whose projection vanishes passes trivially. The check passes when the minimal
    admissible C is finite and at most c_max, and no tube norm of Pi u exceeds ||u||.
    The fitted exponent over a finite alpha range is compared with sigma but not gated.
    """
    h = 1.0 / center
    window = WindowSpec(center=center)
    codim = CodimExponent(k=submanifold.dim, n=submanifold.ambient_dim)
    if fields is None:
        fields = []
        for trial in range(trials):
            rng = np.random.default_rng((seed, trial))
            coeffs = rng.standard_normal(basis.size) + 1j * rng.standard_normal(basis.size)
            fields.append(ModeVector(basis, coeffs))

    def check(u: ModeVector) -> TubeEstimateReport:
        projected = window_project(u, window)
        samples = alpha_sweep(projected, h, submanifold, alphas, grid)
        # the projector bound uses ||u||, not ||Pi u||, and has no residual term
        samples = [
            s.model_copy(update={"full_norm": u.norm(), "residual_norm": 0.0}) for s in samples
        ]
        report = certify_samples(samples, codim, h)
        return report.model_copy(update={"degenerate": projected.norm() == 0.0})

    reports = [check(u) for u in fields]
    contraction = all(
        s.tube_norm <= s.full_norm * (1.0 + 1e-10) for r in reports for s in r.samples
    )
    slopes = [r.fits[0].slope for r in reports if r.fits and not r.degenerate]
    worst = max((r.minimal_C for r in reports), default=0.0)
    min_slope = min(slopes) if slopes else None
    consistent = min_slope is None or min_slope >= codim.sigma - exponent_tolerance
    window_modes = int(np.count_nonzero(window.multiplier(basis.frequencies)))
    logger.info(
        f"Projector check at lambda={center}: {window_modes} window modes, "
        f"worst C={worst:.4g}, min slope={min_slope}"
    )
    return ProjectorReport(
        center=center,
        sigma=codim.sigma,
        trials=reports,
        window_modes=window_modes,
        worst_C=worst,
        min_slope=min_slope,
        exponent_tolerance=exponent_tolerance,
        exponent_consistent=consistent,
        contraction=contraction,
        c_max=c_max,
        passed=math.isfinite(worst) and contraction and (c_max is None or worst <= c_max),
    )


class SaturationRow(BaseModel):
    j: int
    frequency: float
    h: float
    alpha: float
    tube_norm: float
    tube_norm_squared: float
    ratio: float | None = None


class SaturationReport(BaseModel):
    regime: Literal["alpha_fixed", "alpha_equals_sqrt_h"]
    n: int
    k: int
    rows: list[SaturationRow]
    norm_fits: dict[int, ScalingFit]
    squared_fits: dict[int, ScalingFit]
    minimal_C: dict[int, float]
    C_spread: float | None
    ratio_min: float | None
    ratio_spread: float | None
    verdicts: dict[str, bool]
    passed: bool


def _spread(values: list[float]) -> float:
    lo = min(values)
    return math.inf if lo <= 0 else max(values) / lo


def sphere_saturation_check(
    j_list: Sequence[int],
    regime: str = "alpha_fixed",
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    n: int = 2,
    k: int = 1,
    resolution: tuple[int, int] = (48, 4),
    slope_tolerance: float = 0.15,
    c_spread_bound: float = 2.0,
    ratio_spread_bound: float = 3.0,
) -> SaturationReport:
    """
    Saturation of the tube estimate on spheres.

    alpha_fixed: normalized highest-weight harmonics around the great k-subsphere, with
    h = (j(j+n-1))^{-1/2}; the squared tube norm should scale like alpha^{n-k}.
    On S^2 tube norms come from tube-adapted quadrature, on S^n (n > 2) from the
    closed-form tube mass.

    alpha_equals_sqrt_h: normalized zonal harmonics on S^2 around the poles, tube
    half-width h; the ratio ||f_j||^2_{tube} / h should stay bounded below.
    """
    rows: list[SaturationRow] = []
    norm_fits: dict[int, ScalingFit] = {}
    squared_fits: dict[int, ScalingFit] = {}
    minimal_C: dict[int, float] = {}
    verdicts: dict[str, bool] = {}
    j_list = sorted(int(j) for j in j_list)

    if regime == "alpha_fixed":
        submanifold = SubmanifoldSpec.great_subsphere(n, k)
        codim = CodimExponent(k=k, n=n)
        target = float(n - k)
        for j in j_list:
            psi = ExplicitEigenfunction(family="highest_weight", j=j, n=n)
            h = 1.0 / psi.frequency
            if n == 2:
                samples = alpha_sweep(
                    psi, h, submanifold, alphas, TubeQuadrature(psi.manifold, resolution)
                )
            else:
                norm_sq = psi.raw_norm_squared
                samples = [
                    ConcentrationSample(
                        alpha=a,
                        h=h,
                        tube_norm=math.sqrt(
                            highest_weight_tube_mass(j, n, k, a * math.sqrt(h)) / norm_sq
                        ),
                        full_norm=1.0,
                    )
                    for a in sorted(alphas)
                ]
            report = certify_samples(samples, codim, h)
            minimal_C[j] = report.minimal_C
            for s in report.samples:
                rows.append(
                    SaturationRow(
                        j=j,
                        frequency=psi.frequency,
                        h=h,
                        alpha=s.alpha,
                        tube_norm=s.tube_norm,
                        tube_norm_squared=s.tube_norm**2,
                    )
                )
            if not report.fits or report.squared_fit is None:
                raise FitError(f"saturation sweep for j={j} needs at least 3 positive samples")
            norm_fits[j] = report.fits[0]
            squared_fits[j] = report.squared_fit
            verdicts[f"squared_slope_j{j}"] = (
                abs(report.squared_fit.slope - target) <= slope_tolerance
            )
            verdicts[f"norm_slope_j{j}"] = abs(report.fits[0].slope - target / 2) <= slope_tolerance
        c_spread = _spread(list(minimal_C.values()))
        verdicts["C_stable"] = c_spread < c_spread_bound
        report = SaturationReport(
            regime=regime,
            n=n,
            k=k,
            rows=rows,
            norm_fits=norm_fits,
            squared_fits=squared_fits,
            minimal_C=minimal_C,
            C_spread=c_spread,
            ratio_min=None,
            ratio_spread=None,
            verdicts=verdicts,
            passed=all(verdicts.values()),
        )
    elif regime == "alpha_equals_sqrt_h":
        if n != 2:
            raise ValueError("the zonal regime is implemented on S^2")
        submanifold = SubmanifoldSpec.pole_pair(2)
        ratios = []
        for j in j_list:
            psi = ExplicitEigenfunction(family="zonal", j=j)
            h = 1.0 / psi.frequency
            alpha = math.sqrt(h)
            tube = Tube(submanifold=submanifold, alpha=alpha, h=h)
            value = tube_norm(psi, tube, TubeQuadrature(psi.manifold, resolution))
            ratio = value**2 / h
            ratios.append(ratio)
            rows.append(
                SaturationRow(
                    j=j,
                    frequency=psi.frequency,
                    h=h,
                    alpha=alpha,
                    tube_norm=value,
                    tube_norm_squared=value**2,
                    ratio=ratio,
                )
            )
        ratio_spread = _spread(ratios)
        verdicts["ratio_positive"] = min(ratios) > 0
        verdicts["ratio_stable"] = ratio_spread < ratio_spread_bound
        report = SaturationReport(
            regime=regime,
            n=n,
            k=0,
            rows=rows,
            norm_fits={},
            squared_fits={},
            minimal_C={},
            C_spread=None,
            ratio_min=min(ratios),
            ratio_spread=ratio_spread,
            verdicts=verdicts,
            passed=all(verdicts.values()),
        )
    else:
        raise ValueError(f"unknown saturation regime {regime!r}")

    for name, ok in report.verdicts.items():
        logger.info(f"Saturation {regime} {name}: {'pass' if ok else 'fail'}")
    return report
