"""
Resolvent module for the tube concentration lab.
Damping profiles, Galerkin Gram matrices of the damping, assembly of the damped
Helmholtz operator L_h = -h^2 Laplacian - 1 + i h b in a truncated eigenbasis, and
smallest-singular-value sweeps in h.

With Lambda = diag(lambda_j^2) the eigenvalues of -Laplacian, the assembled matrix is
L = h^2 Lambda - I + i h B.

Damping that is invariant under rotation about the x3 axis (S^2), or independent of
the free coordinates of a torus, makes B block diagonal by azimuthal order or free
frequency. Blocks are computed by one-dimensional quadrature (S^2) or from the
discrete Fourier coefficients of b (tori), and every singular value problem is
solved block by block.
"""

import logging
import math
from collections import defaultdict
from collections.abc import Sequence
from typing import Literal

import numpy as np
from numpy.polynomial.legendre import leggauss
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import eigvalsh, svdvals

from app.errors import TruncationError, UnderResolvedError, UnsupportedError
from app.geometry import (
    ManifoldModel,
    QuadratureGrid,
    SubmanifoldSpec,
    build_grid,
    distance_to_submanifold,
    validate_points,
)
from app.harmonics import legendre_column
from app.parallel import map_ordered
from app.scaling import ScalingFit, fit_power_law
from app.spectral import (
    ModeVector,
    SpectralBasis,
    get_sphere_basis,
    get_torus_basis,
    highest_weight_eval,
)

logger = logging.getLogger(__name__)

HERMITIAN_TOLERANCE = 1e-12
PSD_TOLERANCE = 1e-10


class DampingProfile(BaseModel):
    """
    A nonnegative damping coefficient b.

    distance_power: amplitude * d(p, Sigma)^(2 kappa).
    smooth_surrogate: amplitude * sin(d)^(2 kappa) on spheres and
        amplitude * (sum_i sin^2(pi x_i / P_i))^kappa over the fixed axes on tori.
    constant: amplitude everywhere.
    patch_max: pointwise maximum of the patches.
    """

    model_config = ConfigDict(frozen=True)

    form: Literal["distance_power", "smooth_surrogate", "constant", "patch_max"]
    submanifold: SubmanifoldSpec | None = None
    kappa: float | None = Field(default=None, gt=0)
    amplitude: float = Field(default=1.0, ge=0)
    patches: tuple["DampingProfile", ...] = ()

    @model_validator(mode="after")
    def _check_form(self):
        if self.form in ("distance_power", "smooth_surrogate"):
            if self.submanifold is None or self.kappa is None:
                raise ValueError(f"{self.form} damping needs a submanifold and kappa")
        if self.form == "patch_max" and not self.patches:
            raise ValueError("patch_max damping needs at least one patch")
        return self

    @classmethod
    def constant(cls, c: float) -> "DampingProfile":
        return cls(form="constant", amplitude=c)

    @classmethod
    def surrogate(cls, submanifold: SubmanifoldSpec, kappa: float, amplitude: float = 1.0):
        return cls(
            form="smooth_surrogate", submanifold=submanifold, kappa=kappa, amplitude=amplitude
        )

    @classmethod
    def distance_power(cls, submanifold: SubmanifoldSpec, kappa: float, amplitude: float = 1.0):
        return cls(form="distance_power", submanifold=submanifold, kappa=kappa, amplitude=amplitude)

    @classmethod
    def patch_max(cls, patches: Sequence["DampingProfile"]) -> "DampingProfile":
        return cls(form="patch_max", patches=tuple(patches))

    @property
    def kappa0(self) -> float | None:
        """Largest vanishing order among the components, None for constant damping."""
        if self.form == "patch_max":
            kappas = [p.kappa0 for p in self.patches if p.kappa0 is not None]
            return max(kappas) if kappas else None
        return self.kappa

    def evaluate(self, manifold: ManifoldModel, points) -> np.ndarray:
        points = validate_points(manifold, points)
        if self.form == "constant":
            return np.full(points.shape[:-1], self.amplitude)
        if self.form == "patch_max":
            return np.max([p.evaluate(manifold, points) for p in self.patches], axis=0)
        sub = self.submanifold
        if self.form == "distance_power":
            d = distance_to_submanifold(manifold, sub, points)
            return self.amplitude * d ** (2.0 * self.kappa)
        sub.check_on(manifold)
        if manifold.kind == "sphere":
            if sub.kind == "great_subsphere":
                s = np.linalg.norm(points[..., sub.dim + 1 :], axis=-1)
            else:
                s = np.linalg.norm(points[..., :-1], axis=-1)
            return self.amplitude * np.minimum(s, 1.0) ** (2.0 * self.kappa)
        mask = np.asarray(sub.mask)
        periods = np.asarray(manifold.periods)[mask]
        total = np.sum(np.sin(math.pi * points[..., mask] / periods) ** 2, axis=-1)
        return self.amplitude * total**self.kappa

    def bounds(self, manifold: ManifoldModel) -> tuple[float, float] | None:
        """Constants c1, c2 with c1 d^(2 kappa) <= b <= c2 d^(2 kappa)."""
        if self.form == "distance_power":
            return self.amplitude, self.amplitude
        if self.form != "smooth_surrogate":
            return None
        kappa = self.kappa
        if manifold.kind == "sphere":
            return self.amplitude * (2.0 / math.pi) ** (2.0 * kappa), self.amplitude
        periods = np.asarray(manifold.periods)[np.asarray(self.submanifold.mask)]
        return (
            self.amplitude * (4.0 / float(np.max(periods)) ** 2) ** kappa,
            self.amplitude * (math.pi**2 / float(np.min(periods)) ** 2) ** kappa,
        )

    def dependent_axes(self) -> set[int]:
        """Torus axes b depends on."""
        if self.form == "constant":
            return set()
        if self.form == "patch_max":
            return set().union(*(p.dependent_axes() for p in self.patches))
        return {i for i, fixed in enumerate(self.submanifold.mask) if fixed}

    def is_axisymmetric(self) -> bool:
        """True when b on S^2 depends on x3 only."""
        if self.form == "constant":
            return True
        if self.form == "patch_max":
            return all(p.is_axisymmetric() for p in self.patches)
        sub = self.submanifold
        return sub.ambient_dim == 2 and sub.kind in ("great_subsphere", "pole_pair")

    def describe(self) -> str:
        if self.form == "constant":
            return f"constant({self.amplitude:g})"
        if self.form == "patch_max":
            return "max(" + ", ".join(p.describe() for p in self.patches) + ")"
        return f"{self.form}({self.submanifold.kind}, kappa={self.kappa:g}, amp={self.amplitude:g})"


DampingProfile.model_rebuild()


def _check_gram_block(block: np.ndarray) -> None:
    scale = max(1.0, float(np.max(np.abs(block), initial=0.0)))
    defect = float(np.max(np.abs(block - block.conj().T), initial=0.0))
    if defect > HERMITIAN_TOLERANCE * scale:
        logger.error(f"Gram block Hermitian defect {defect:.3e}")
        raise UnderResolvedError(f"damping Gram matrix is not Hermitian (defect {defect:.3e})")
    if block.size and eigvalsh(0.5 * (block + block.conj().T))[0] < -PSD_TOLERANCE * scale:
        raise UnderResolvedError("damping Gram matrix has a negative eigenvalue; refine the grid")


class GramOperator:
    """
    Block-diagonal Hermitian damping Gram matrix.

    blocks is a list of (indices, matrix) pairs; the index sets partition the basis.
    """

    def __init__(self, size: int, blocks: list[tuple[np.ndarray, np.ndarray]]):
        self.size = size
        self.blocks = blocks
        covered = np.concatenate([idx for idx, _ in blocks]) if blocks else np.array([], int)
        if covered.size != size or np.unique(covered).size != size:
            raise ValueError("Gram blocks must partition the basis indices")

    @classmethod
    def from_dense(cls, matrix: np.ndarray) -> "GramOperator":
        return cls(matrix.shape[0], [(np.arange(matrix.shape[0]), matrix)])

    def apply(self, vec: np.ndarray) -> np.ndarray:
        out = np.zeros(self.size, dtype=complex)
        for idx, block in self.blocks:
            out[idx] = block @ vec[idx]
        return out

    def quadratic(self, vec: np.ndarray) -> float:
        """<B v, v>, real for Hermitian B."""
        return float(np.vdot(vec, self.apply(vec)).real)

    def dense(self) -> np.ndarray:
        out = np.zeros((self.size, self.size), dtype=complex)
        for idx, block in self.blocks:
            out[np.ix_(idx, idx)] = block
        return out

    def min_eigenvalue(self) -> float:
        return min(float(eigvalsh(0.5 * (b + b.conj().T))[0]) for _, b in self.blocks)

    def validate(self) -> "GramOperator":
        seen = set()
        for _, block in self.blocks:
            if id(block) not in seen:
                _check_gram_block(block)
                seen.add(id(block))
        return self


def _sphere_blocks(b: DampingProfile, basis: SpectralBasis) -> list[tuple[np.ndarray, np.ndarray]]:
    L = basis.truncation
    x, w = leggauss(2 * L + 64)
    meridian = np.stack([np.sqrt(np.clip(1.0 - x * x, 0.0, None)), np.zeros_like(x), x], axis=-1)
    meridian /= np.linalg.norm(meridian, axis=-1, keepdims=True)
    weighted = 2.0 * math.pi * w * b.evaluate(basis.manifold, meridian)

    def order_blocks(m: int) -> list[tuple[np.ndarray, np.ndarray]]:
        q = legendre_column(m, L, x)
        block = (q * weighted) @ q.T
        degrees = np.arange(m, L + 1)
        out = [(degrees * degrees + degrees + m, block.astype(complex))]
        if m > 0:
            out.append((degrees * degrees + degrees - m, block.astype(complex)))
        return out

    return [blk for blocks in map_ordered(order_blocks, range(L + 1)) for blk in blocks]


def _torus_blocks(b: DampingProfile, basis: SpectralBasis) -> list[tuple[np.ndarray, np.ndarray]]:
    manifold = basis.manifold
    axes = sorted(b.dependent_axes())
    if not axes:
        value = float(b.evaluate(manifold, np.zeros(manifold.dim)))
        return [(np.array([j]), np.array([[value + 0j]])) for j in range(basis.size)]

    K = basis.truncation
    samples = 8 * K + 64 if len(axes) > 1 else max(8 * K + 64, 1024)
    periods = np.asarray(manifold.periods)
    grids = np.meshgrid(*[periods[a] * np.arange(samples) / samples for a in axes], indexing="ij")
    points = np.zeros(grids[0].shape + (manifold.dim,))
    for a, g in zip(axes, grids, strict=True):
        points[..., a] = g
    coeffs = np.fft.fftn(b.evaluate(manifold, points)) / samples ** len(axes)

    free = [a for a in range(manifold.dim) if a not in axes]
    sectors: dict[tuple, list[int]] = defaultdict(list)
    for j, mode in enumerate(basis.modes):
        sectors[tuple(int(mode[a]) for a in free)].append(j)

    blocks = []
    shared: dict[tuple, np.ndarray] = {}
    for key in sorted(sectors):
        idx = np.array(sectors[key])
        dep = basis.modes[idx][:, axes]
        signature = tuple(map(tuple, dep))
        if signature not in shared:
            diff = (dep[:, None, :] - dep[None, :, :]) % samples
            shared[signature] = coeffs[tuple(diff[..., i] for i in range(len(axes)))]
        blocks.append((idx, shared[signature]))
    return blocks


def gram_blocks(b: DampingProfile, basis: SpectralBasis) -> GramOperator:
    """
    Block-diagonal Gram matrix B_jk = <b phi_k, phi_j> using the symmetry of b.

    Raises:
        UnsupportedError: damping on S^2 without rotational symmetry about x3
    """
    if basis.manifold.kind == "sphere":
        if not b.is_axisymmetric():
            raise UnsupportedError("sector Gram blocks on S^2 need axisymmetric damping")
        blocks = _sphere_blocks(b, basis)
    else:
        blocks = _torus_blocks(b, basis)
    logger.info(f"Assembled damping Gram {b.describe()} in {len(blocks)} blocks")
    return GramOperator(basis.size, blocks).validate()


def gram_matrix(
    b: DampingProfile, basis: SpectralBasis, grid: QuadratureGrid | None = None
) -> np.ndarray:
    """
    Dense Hermitian PSD Gram matrix of multiplication by b.

    With a grid the matrix is computed by full quadrature, otherwise from the sector blocks.

    Raises:
        UnderResolvedError: Hermitian defect or negative eigenvalue below tolerance
    """
    if grid is None:
        return gram_blocks(b, basis).dense()
    phi = basis.evaluate(grid.nodes)
    weighted = (grid.weights * b.evaluate(basis.manifold, grid.nodes))[:, None] * phi
    matrix = (phi.conj().T @ weighted).astype(complex)
    _check_gram_block(matrix)
    return matrix


def min_singular(matrix: np.ndarray) -> float:
    """Smallest singular value by dense SVD."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"min_singular needs a square matrix, got shape {matrix.shape}")
    if matrix.shape[0] == 0:
        return 0.0
    return float(svdvals(matrix, check_finite=False)[-1])


class OperatorAssembly:
    """L = h^2 Lambda - I + i h B, kept in the block structure of B."""

    def __init__(self, h: float, eigenvalues: np.ndarray, gram: GramOperator):
        if h <= 0:
            raise ValueError(f"h must be positive, got {h}")
        self.h = h
        self.eigenvalues = eigenvalues
        self.gram = gram

    def block(self, idx: np.ndarray, gram_block: np.ndarray) -> np.ndarray:
        diag = np.diag(self.h * self.h * self.eigenvalues[idx] - 1.0)
        return diag + 1j * self.h * gram_block

    @property
    def matrix(self) -> np.ndarray:
        h = self.h
        return np.diag(h * h * self.eigenvalues - 1.0) + 1j * h * self.gram.dense()

    def apply(self, vec: np.ndarray) -> np.ndarray:
        h = self.h
        return (h * h * self.eigenvalues - 1.0) * vec + 1j * h * self.gram.apply(vec)

    def sigma_min(self) -> float:
        values = map_ordered(lambda blk: min_singular(self.block(*blk)), self.gram.blocks)
        return min(values)


def assemble_Lh(h: float, basis: SpectralBasis, B: np.ndarray | GramOperator) -> OperatorAssembly:
    """
    Build L_h = h^2 Lambda - I + i h B in the basis.

    Args:
        h: Semiclassical parameter, positive
        basis: Eigenbasis supplying Lambda
        B: Damping Gram operator, or a dense Hermitian Gram matrix

    Returns:
        OperatorAssembly keeping the block structure of B

    Raises:
        ValueError: h <= 0
    """
    if isinstance(B, GramOperator):
        gram = B
    else:
        gram = GramOperator.from_dense(np.asarray(B, dtype=complex))
    return OperatorAssembly(h, np.asarray(basis.eigenvalues), gram)


def snap_to_spectrum(h_grid: Sequence[float], basis: SpectralBasis) -> list[float]:
    """Replace each h by 1/lambda_j for the basis frequency nearest 1/h."""
    freqs = np.unique(basis.frequencies[basis.frequencies > 0])
    snapped = [1.0 / float(freqs[np.argmin(np.abs(freqs - 1.0 / h))]) for h in h_grid]
    if len(set(snapped)) != len(snapped):
        raise ValueError(f"h grid {list(h_grid)} collapses after snapping to the spectrum")
    return snapped


def resonant_degree(h: float) -> int | None:
    """Degree j with h = (j(j+1))^{-1/2} on S^2, or None when h is off the spectrum."""
    j = int(round(-0.5 + math.sqrt(0.25 + 1.0 / (h * h))))
    if j < 1 or abs(h * math.sqrt(j * (j + 1)) - 1.0) > 1e-9:
        return None
    return j


def quasimode_rayleigh(j: int, b: DampingProfile, grid: QuadratureGrid | None = None) -> float:
    """
    ||L_h e_j|| / ||e_j|| for the highest-weight harmonic on S^2 at h = (j(j+1))^{-1/2}.

    The -h^2 Laplacian - 1 part annihilates e_j, leaving h ||b e_j|| / ||e_j||.
    """
    sphere = ManifoldModel.sphere(2)
    if grid is None:
        n_phi = 1 if b.is_axisymmetric() else 2 * j + 64
        grid = build_grid(sphere, (j + 64, n_phi))
    h = 1.0 / math.sqrt(j * (j + 1))
    e = highest_weight_eval(j, 2, grid.nodes)
    bv = b.evaluate(sphere, grid.nodes)
    num = np.sum(grid.weights * np.abs(bv * e) ** 2)
    den = np.sum(grid.weights * np.abs(e) ** 2)
    return float(h * math.sqrt(num / den))


class ResolventSweep(BaseModel):
    kappa: float
    damping: str
    truncation: int
    basis_size: int
    h_grid: list[float]
    sigma_min: list[float]
    rayleigh: list[float | None]
    damping_floor: list[float]
    certificate_values: list[float]
    fit: ScalingFit | None
    stationary_fit: ScalingFit | None
    certificate_c: float
    spread: float
    spread_bound: float
    checks: dict[str, bool]
    passed: bool


def resolvent_sweep(
    b: DampingProfile,
    basis: SpectralBasis,
    h_grid: Sequence[float],
    kappa: float,
    snap: bool = False,
    spread_bound: float = 3.0,
    quasimodes: bool = False,
    gram: GramOperator | None = None,
) -> ResolventSweep:
    """
    Sweep sigma_min(L_h) over h and certify sigma_min >= c h^(1+kappa).

    The certificate passes when c = min sigma_min h^-(1+kappa) is positive and the
    max/min spread of sigma_min h^-(1+kappa) is below spread_bound.

    Raises:
        TruncationError: the basis does not contain every frequency below 2/h_min
    """
    h_values = sorted((float(h) for h in h_grid), reverse=True)
    if not h_values:
        raise ValueError("h grid is empty")
    if len(set(h_values)) != len(h_values):
        raise ValueError("h grid must be strictly decreasing")
    if snap:
        h_values = sorted(snap_to_spectrum(h_values, basis), reverse=True)
    needed = 2.0 / h_values[-1]
    if not basis.covers(needed):
        logger.error(f"Truncation {basis.truncation} too small for h={h_values[-1]:.4g}")
        raise TruncationError(
            f"basis complete below frequency {basis.complete_frequency:.4g}, "
            f"smallest h={h_values[-1]:.4g} needs {needed:.4g}"
        )

    gram = gram if gram is not None else gram_blocks(b, basis)
    floor = gram.min_eigenvalue()
    sigmas = map_ordered(lambda h: assemble_Lh(h, basis, gram).sigma_min(), h_values)

    rayleigh: list[float | None] = []
    for h in h_values:
        j = resonant_degree(h) if quasimodes and basis.manifold.kind == "sphere" else None
        rayleigh.append(quasimode_rayleigh(j, b) if j is not None else None)

    cert = [s * h ** -(1.0 + kappa) for s, h in zip(sigmas, h_values, strict=True)]
    c = min(cert)
    spread = max(cert) / c if c > 0 else math.inf
    fit = stationary = None
    if len(h_values) >= 3 and min(sigmas) > 0:
        fit = fit_power_law(h_values, sigmas)
        lams = [1.0 / h for h in h_values]
        stationary = fit_power_law(
            lams, [s / (h * h) for s, h in zip(sigmas, h_values, strict=True)]
        )

    tol = 1e-10
    checks = {
        "damping_floor": all(
            s >= h * floor - tol for s, h in zip(sigmas, h_values, strict=True)
        ),
        "rayleigh_upper": all(
            r is None or s <= r * (1 + 1e-9) + tol for s, r in zip(sigmas, rayleigh, strict=True)
        ),
    }
    passed = c > 0 and spread < spread_bound and all(checks.values())
    logger.info(
        f"Resolvent sweep {b.describe()}: slope={fit.slope if fit else None}, "
        f"c={c:.4g}, spread={spread:.3g}"
    )
    return ResolventSweep(
        kappa=kappa,
        damping=b.describe(),
        truncation=basis.truncation,
        basis_size=basis.size,
        h_grid=h_values,
        sigma_min=sigmas,
        rayleigh=rayleigh,
        damping_floor=[h * floor for h in h_values],
        certificate_values=cert,
        fit=fit,
        stationary_fit=stationary,
        certificate_c=c,
        spread=spread,
        spread_bound=spread_bound,
        checks=checks,
        passed=passed,
    )


class EnergyIdentityReport(BaseModel):
    h: float
    imag_part: float
    damping_term: float
    imag_defect: float
    real_part: float
    gradient_term: float
    real_defect: float
    scale: float
    identities_hold: bool
    inequality_i: bool
    inequality_ii: bool


def energy_identity(
    phi: ModeVector, h: float, gram: np.ndarray | GramOperator
) -> EnergyIdentityReport:
    """
    With f = L_h phi, check Im<f,phi> = h<B phi,phi> and
    Re<f,phi> = h^2<Lambda phi,phi> - ||phi||^2,
    then the inequalities h<B phi,phi> <= ||phi|| ||f|| and
    h^2<Lambda phi,phi> <= ||phi||^2 + ||phi|| ||f||.
    """
    assembly = assemble_Lh(h, phi.basis, gram)
    v = np.asarray(phi.coeffs)
    f = assembly.apply(v)
    pairing = complex(np.vdot(v, f))
    damping = h * assembly.gram.quadratic(v)
    norm_sq = float(np.vdot(v, v).real)
    gradient = h * h * float(np.sum(assembly.eigenvalues * np.abs(v) ** 2))
    f_norm = float(np.linalg.norm(f))
    cross = math.sqrt(norm_sq) * f_norm
    scale = max(1.0, norm_sq + cross + gradient + abs(damping))
    imag_defect = abs(pairing.imag - damping)
    real_defect = abs(pairing.real - (gradient - norm_sq))
    slack = 1e-12 * scale
    return EnergyIdentityReport(
        h=h,
        imag_part=pairing.imag,
        damping_term=damping,
        imag_defect=imag_defect,
        real_part=pairing.real,
        gradient_term=gradient,
        real_defect=real_defect,
        scale=scale,
        identities_hold=imag_defect <= slack and real_defect <= slack,
        inequality_i=damping <= cross + slack,
        inequality_ii=gradient <= norm_sq + cross + slack,
    )


class StationaryFormReport(BaseModel):
    frequency: float
    sigma_stationary: float
    sigma_lh: float
    identity_defect: float
    passed: bool


def stationary_form_check(
    lam: float, b: DampingProfile, basis: SpectralBasis, gram: GramOperator | None = None
) -> StationaryFormReport:
    """sigma_min(Lambda - lam^2 + i lam B) and its identity with lam^2 sigma_min(L_{1/lam})."""
    gram = gram if gram is not None else gram_blocks(b, basis)
    eig = np.asarray(basis.eigenvalues)

    def block_sigma(blk) -> float:
        idx, gb = blk
        return min_singular(np.diag(eig[idx] - lam * lam) + 1j * lam * gb)

    sigma_st = min(map_ordered(block_sigma, gram.blocks))
    sigma_lh = assemble_Lh(1.0 / lam, basis, gram).sigma_min()
    reference = max(sigma_st, lam * lam * sigma_lh, 1e-300)
    defect = abs(sigma_st - lam * lam * sigma_lh) / reference
    return StationaryFormReport(
        frequency=lam,
        sigma_stationary=sigma_st,
        sigma_lh=sigma_lh,
        identity_defect=defect,
        passed=defect <= 1e-10,
    )


class TruncationReport(BaseModel):
    h: float
    truncation: int
    refined_truncation: int
    sigma: float
    sigma_refined: float
    relative_change: float
    passed: bool


def truncation_convergence(
    b: DampingProfile, basis: SpectralBasis, h: float, tolerance: float = 0.01
) -> TruncationReport:
    """sigma_min(L_h) at the given and at doubled truncation."""
    if basis.manifold.kind == "sphere":
        refined = get_sphere_basis(2 * basis.truncation)
    else:
        refined = get_torus_basis(basis.manifold, 2 * basis.truncation)
    sigma = assemble_Lh(h, basis, gram_blocks(b, basis)).sigma_min()
    sigma_refined = assemble_Lh(h, refined, gram_blocks(b, refined)).sigma_min()
    change = abs(sigma_refined - sigma) / max(sigma_refined, 1e-300)
    return TruncationReport(
        h=h,
        truncation=basis.truncation,
        refined_truncation=refined.truncation,
        sigma=sigma,
        sigma_refined=sigma_refined,
        relative_change=change,
        passed=change < tolerance,
    )
