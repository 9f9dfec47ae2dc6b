"""
Spectral module for the tube concentration lab.
Orthonormal eigenbases (Fourier modes on flat tori, real spherical harmonics on S^2),
the explicit sphere eigenfunction families, spectral windows, Helmholtz residuals
and Sobolev norms.
"""

import itertools
import logging
import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import betainc, betaln

from app.errors import TruncationError, UnsupportedError
from app.geometry import ManifoldModel, QuadratureGrid, validate_points
from app.harmonics import real_harmonics, sphere_modes, zonal

logger = logging.getLogger(__name__)

# Gaussian window tails are below 1e-15 beyond this many scales
SMOOTH_WINDOW_REACH = 6.0


class SpectralBasis:
    """
    A truncated orthonormal eigenbasis of the Laplacian.

    Entries are ordered by nondecreasing eigenvalue and stored with multiplicity.
    modes holds integer vectors m on tori and (l, m) pairs on S^2.
    """

    def __init__(
        self,
        manifold: ManifoldModel,
        modes: np.ndarray,
        eigenvalues: np.ndarray,
        truncation: int,
        complete_frequency: float,
    ):
        self.manifold = manifold
        self.modes = modes
        self.eigenvalues = eigenvalues
        self.frequencies = np.sqrt(eigenvalues)
        self.truncation = truncation
        self.complete_frequency = complete_frequency
        self._index = {tuple(int(v) for v in mode): j for j, mode in enumerate(modes)}
        for arr in (self.modes, self.eigenvalues, self.frequencies):
            arr.setflags(write=False)

    @property
    def size(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def is_real(self) -> bool:
        return self.manifold.kind == "sphere"

    def index_of(self, mode) -> int:
        try:
            return self._index[tuple(int(v) for v in np.atleast_1d(mode))]
        except KeyError as e:
            raise TruncationError(f"mode {mode} is outside truncation {self.truncation}") from e

    def evaluate(self, nodes: np.ndarray) -> np.ndarray:
        """
        Evaluate every basis function at the given points.

        Returns:
            Matrix of shape (len(nodes), size); complex on tori, real on S^2
        """
        nodes = validate_points(self.manifold, nodes).reshape(-1, self.manifold.ambient_dim)
        if self.manifold.kind == "sphere":
            return real_harmonics(self.truncation, nodes)
        wavenumbers = 2.0 * math.pi * self.modes / np.asarray(self.manifold.periods)
        return np.exp(1j * nodes @ wavenumbers.T) / math.sqrt(self.manifold.total_volume)

    def synthesize(self, coeffs: np.ndarray, nodes: np.ndarray) -> np.ndarray:
        return self.evaluate(nodes) @ coeffs

    def gram(self, grid: QuadratureGrid) -> np.ndarray:
        """Quadrature Gram matrix of the basis on a grid; the identity on resolving grids."""
        phi = self.evaluate(grid.nodes)
        return phi.conj().T @ (grid.weights[:, None] * phi)

    def covers(self, frequency: float) -> bool:
        """True when every eigenmode with frequency <= the given one is in the basis."""
        return frequency < self.complete_frequency


def torus_basis(manifold: ManifoldModel, K: int) -> SpectralBasis:
    """
    Fourier basis exp(2 pi i m.x / P) / sqrt(vol) with |m_i| <= K.

    Args:
        manifold: Flat torus
        K: Max frequency per axis, at least 1
    """
    if manifold.kind != "torus":
        raise UnsupportedError("torus_basis needs a torus")
    if K < 1:
        raise TruncationError(f"truncation K must be at least 1, got {K}")
    modes = np.array(list(itertools.product(range(-K, K + 1), repeat=manifold.dim)), dtype=int)
    periods = np.asarray(manifold.periods)
    eigenvalues = np.sum((2.0 * math.pi * modes / periods) ** 2, axis=1)
    order = np.lexsort(tuple(modes[:, i] for i in reversed(range(manifold.dim))) + (eigenvalues,))
    complete = 2.0 * math.pi * (K + 1) / float(np.max(periods))
    logger.debug(f"Built torus basis K={K} with {len(order)} modes")
    return SpectralBasis(manifold, modes[order], eigenvalues[order], K, complete)


def sphere_basis(L: int) -> SpectralBasis:
    """Real orthonormal spherical harmonics on S^2 up to degree L."""
    if L < 1:
        raise TruncationError(f"truncation L must be at least 1, got {L}")
    modes = sphere_modes(L)
    eigenvalues = (modes[:, 0] * (modes[:, 0] + 1)).astype(float)
    complete = math.sqrt((L + 1) * (L + 2))
    logger.debug(f"Built sphere basis L={L} with {len(modes)} modes")
    return SpectralBasis(ManifoldModel.sphere(2), modes, eigenvalues, L, complete)


# Lazily built bases, shared read-only
_basis_cache: dict[tuple, SpectralBasis] = {}


def get_sphere_basis(L: int) -> SpectralBasis:
    """Get or create the shared S^2 basis of degree L."""
    key = ("sphere", L)
    if key not in _basis_cache:
        _basis_cache[key] = sphere_basis(L)
    return _basis_cache[key]


def get_torus_basis(manifold: ManifoldModel, K: int) -> SpectralBasis:
    """Get or create the shared torus basis with truncation K."""
    key = ("torus", manifold.dim, manifold.periods, K)
    if key not in _basis_cache:
        _basis_cache[key] = torus_basis(manifold, K)
    return _basis_cache[key]


class ModeVector:
    """A function given by its coefficients in an orthonormal basis."""

    def __init__(self, basis: SpectralBasis, coeffs):
        coeffs = np.array(coeffs, dtype=complex)
        if coeffs.shape != (basis.size,):
            raise ValueError(f"expected {basis.size} coefficients, got shape {coeffs.shape}")
        self.basis = basis
        self.coeffs = coeffs
        self.coeffs.setflags(write=False)

    @classmethod
    def zeros(cls, basis: SpectralBasis) -> "ModeVector":
        return cls(basis, np.zeros(basis.size, dtype=complex))

    @classmethod
    def from_modes(cls, basis: SpectralBasis, amplitudes: dict) -> "ModeVector":
        """Build a vector from {mode: coefficient}."""
        coeffs = np.zeros(basis.size, dtype=complex)
        for mode, value in amplitudes.items():
            coeffs[basis.index_of(mode)] += value
        return cls(basis, coeffs)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def inner(self, other: "ModeVector") -> complex:
        """L2 inner product <self, other>, linear in the first slot."""
        return complex(np.vdot(other.coeffs, self.coeffs))

    def scaled(self, factor: complex) -> "ModeVector":
        return ModeVector(self.basis, self.coeffs * factor)

    def __add__(self, other: "ModeVector") -> "ModeVector":
        return ModeVector(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other: "ModeVector") -> "ModeVector":
        return ModeVector(self.basis, self.coeffs - other.coeffs)

    def evaluate(self, nodes: np.ndarray) -> np.ndarray:
        return self.basis.synthesize(self.coeffs, nodes)

    def rows(self) -> list[tuple[int, float, float, float]]:
        """CSV rows (j, eigenvalue, Re c_j, Im c_j)."""
        return [
            (j, float(lam), float(c.real), float(c.imag))
            for j, (lam, c) in enumerate(zip(self.basis.eigenvalues, self.coeffs, strict=True))
        ]


class WindowSpec(BaseModel):
    """A sharp window [center, center + 1) or a smooth Gaussian window around center."""

    model_config = ConfigDict(frozen=True)

    center: float = Field(ge=0)
    kind: Literal["sharp", "smooth"] = "sharp"
    scale: float = Field(default=1.0, gt=0)

    def multiplier(self, frequencies: np.ndarray) -> np.ndarray:
        if self.kind == "sharp":
            return ((frequencies >= self.center) & (frequencies < self.center + 1.0)).astype(float)
        return np.exp(-(((frequencies - self.center) / self.scale) ** 2))

    @property
    def reach(self) -> float:
        """Highest frequency the window sees."""
        if self.kind == "sharp":
            return self.center + 1.0
        return self.center + SMOOTH_WINDOW_REACH * self.scale


def window_project(u: ModeVector, window: WindowSpec) -> ModeVector:
    """
    Apply a spectral window to u.

    Raises:
        TruncationError: the window reaches frequencies the basis does not contain
    """
    if window.reach > u.basis.complete_frequency:
        logger.error(f"Window reaching {window.reach:.4g} exceeds truncation")
        raise TruncationError(
            f"window reaches frequency {window.reach:.4g} but the basis is complete only "
            f"below {u.basis.complete_frequency:.4g}"
        )
    return ModeVector(u.basis, u.coeffs * window.multiplier(u.basis.frequencies))


def helmholtz_residual(psi: ModeVector, h: float) -> ModeVector:
    """Residual g of (h^2 Laplacian + 1) psi = g, coefficientwise (1 - h^2 lambda_j^2) psi_j."""
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    return ModeVector(psi.basis, psi.coeffs * (1.0 - h * h * psi.basis.eigenvalues))


def sobolev_norm(u: ModeVector, s: float) -> float:
    """
    H^s norm from the spectral side.

    Args:
        u: Field in a truncated eigenbasis
        s: Sobolev order, any real number

    Returns:
        (sum (1 + lambda_j^2)^s |u_j|^2)^(1/2)
    """
    return float(np.sqrt(np.sum((1.0 + u.basis.eigenvalues) ** s * np.abs(u.coeffs) ** 2)))


def highest_weight_eval(j: int, n: int, p) -> np.ndarray:
    """Unnormalized highest-weight harmonic (p1 + i p2)^j on S^n."""
    p = validate_points(ManifoldModel.sphere(n), p)
    return (p[..., 0] + 1j * p[..., 1]) ** j


def zonal_eval(j: int, theta) -> np.ndarray:
    """L2-normalized degree-j zonal harmonic on S^2 at colatitude theta."""
    return zonal(j, np.cos(np.asarray(theta, dtype=float))).reshape(np.shape(theta))


def highest_weight_norm_squared(j: int, n: int) -> float:
    """||(x1 + i x2)^j||^2 over S^n, from |x1, x2|^2 ~ Beta(1, (n - 1) / 2)."""
    area = ManifoldModel.sphere(n).total_volume
    b = (n - 1) / 2.0
    return area * math.exp(betaln(1.0 + j, b) - betaln(1.0, b))


def highest_weight_tube_mass(j: int, n: int, k: int, beta: float) -> float:
    """
    Squared L2 norm of (x1 + i x2)^j over the tube of half-width beta around the
    great k-subsphere {x_{k+2} = ... = x_{n+1} = 0}.

    Under the uniform measure (|x1,x2|^2, |x3..x_{k+1}|^2, |x_{k+2}..|^2) is
    Dirichlet(1, (k-1)/2, (n-k)/2), and d(x, subsphere) < beta iff the last block
    has squared norm below sin^2(beta).
    """
    area = ManifoldModel.sphere(n).total_volume
    a, b = (n - k) / 2.0, (k + 1) / 2.0
    if k == 1:
        in_plane = 1.0
    else:
        in_plane = math.exp(betaln(1.0 + j, (k - 1) / 2.0) - betaln(1.0, (k - 1) / 2.0))
    cut = 1.0 if beta >= math.pi / 2 else math.sin(beta) ** 2
    normal = math.exp(betaln(a, b + j) - betaln(a, b)) * float(betainc(a, b + j, cut))
    return area * in_plane * normal


class ExplicitEigenfunction(BaseModel):
    """Highest-weight (x1 + i x2)^j on S^n or the zonal harmonic of degree j on S^2."""

    model_config = ConfigDict(frozen=True)

    family: Literal["highest_weight", "zonal"]
    j: int = Field(ge=0)
    n: int = Field(default=2, ge=2)
    normalized: bool = True

    @property
    def manifold(self) -> ManifoldModel:
        return ManifoldModel.sphere(self.n)

    @property
    def eigenvalue(self) -> float:
        return float(self.j * (self.j + self.n - 1))

    @property
    def frequency(self) -> float:
        return math.sqrt(self.eigenvalue)

    @property
    def raw_norm_squared(self) -> float:
        if self.family == "zonal":
            return 1.0
        return highest_weight_norm_squared(self.j, self.n)

    @property
    def normalization(self) -> float:
        return 1.0 / math.sqrt(self.raw_norm_squared) if self.normalized else 1.0

    def norm(self) -> float:
        return 1.0 if self.normalized else math.sqrt(self.raw_norm_squared)

    def evaluate(self, points) -> np.ndarray:
        if self.family == "zonal":
            if self.n != 2:
                raise UnsupportedError("zonal harmonics are implemented on S^2 only")
            p = validate_points(self.manifold, points)
            x = np.clip(p[..., 2], -1.0, 1.0)
            return zonal(self.j, x.ravel()).reshape(x.shape).astype(complex)
        return highest_weight_eval(self.j, self.n, points) * self.normalization


class WindowDecompositionReport(BaseModel):
    center: float
    pieces: int
    piece_norms: list[float]
    orthogonality_defect: float
    sum_defect: float
    far_window_ratio: float | None
    far_window_bound_holds: bool
    remainder_norm: float
    remainder_bound: float
    remainder_bound_holds: bool


def window_decomposition(
    psi: ModeVector, center: float, eps0: float
) -> tuple[list[ModeVector], ModeVector, WindowDecompositionReport]:
    """
    Split psi into unit windows around center plus a far remainder.

    psi = sum_{|k| <= N} Pi_{center + k} psi + R_N with N = floor(eps0 * center).
    For |k| >= 2, ||Pi_{center+k} psi|| <= (2 center / |k|) ||(1 - h^2 lambda^2) Pi_{center+k} psi||
    with h = 1 / center, and ||R_N|| <= (center / N) ||g||.

    Returns:
        (pieces ordered by k, remainder, report)
    """
    if not 0 < eps0 < 1:
        raise ValueError(f"eps0 must lie in (0, 1), got {eps0}")
    N = int(math.floor(eps0 * center))
    if N < 1:
        raise ValueError(f"eps0 * center must be at least 1, got {eps0 * center:.3g}")
    h = 1.0 / center
    pieces = [window_project(psi, WindowSpec(center=center + k)) for k in range(-N, N + 1)]
    total = np.sum([p.coeffs for p in pieces], axis=0)
    remainder = ModeVector(psi.basis, psi.coeffs - total)

    overlap = 0.0
    for a, b in itertools.combinations(pieces, 2):
        overlap = max(overlap, abs(a.inner(b)))

    ratios = []
    for k, piece in zip(range(-N, N + 1), pieces, strict=True):
        if abs(k) < 2 or piece.norm() == 0.0:
            continue
        bound = 2.0 * center / abs(k) * helmholtz_residual(piece, h).norm()
        ratios.append(piece.norm() / bound)
    far_ratio = max(ratios) if ratios else None

    g_norm = helmholtz_residual(psi, h).norm()
    remainder_bound = center / N * g_norm
    report = WindowDecompositionReport(
        center=center,
        pieces=len(pieces),
        piece_norms=[p.norm() for p in pieces],
        orthogonality_defect=overlap,
        sum_defect=float(np.linalg.norm(total + remainder.coeffs - psi.coeffs)),
        far_window_ratio=far_ratio,
        far_window_bound_holds=far_ratio is None or far_ratio <= 1.0 + 1e-12,
        remainder_norm=remainder.norm(),
        remainder_bound=remainder_bound,
        remainder_bound_holds=remainder.norm() <= remainder_bound * (1.0 + 1e-12),
    )
    return pieces, remainder, report
