"""
Geometry module for the tube concentration lab.
Manifold models, geodesic distances, submanifold distances and quadrature grids.

Every L2 quantity in the lab is a weighted sum over a QuadratureGrid. Grids either
cover the whole manifold or are adapted to one tube, in which case every node lies
inside the tube and the indicator never has to be resolved.
"""

import logging
import math
from typing import Literal

import numpy as np
from numpy.polynomial.legendre import leggauss
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.errors import (
    IncompatibleSubmanifoldError,
    OffManifoldError,
    UnderResolvedError,
    UnsupportedError,
)

logger = logging.getLogger(__name__)

POINT_TOLERANCE = 1e-12
# Nodes required across a tube in each normal direction for indicator quadrature
MIN_NODES_ACROSS_TUBE = 4


class ManifoldModel(BaseModel):
    """A round unit sphere S^n or a flat torus with the given periods."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["sphere", "torus"]
    dim: int = Field(ge=1)
    periods: tuple[float, ...] | None = None

    @model_validator(mode="before")
    @classmethod
    def _default_periods(cls, data):
        if isinstance(data, dict) and data.get("kind") == "torus" and data.get("periods") is None:
            data = {**data, "periods": (1.0,) * int(data.get("dim", 1))}
        return data

    @model_validator(mode="after")
    def _check_periods(self):
        if self.kind == "torus":
            if len(self.periods) != self.dim:
                raise ValueError(f"torus of dimension {self.dim} needs {self.dim} periods")
            if any(not (p > 0 and math.isfinite(p)) for p in self.periods):
                raise ValueError("torus periods must be positive and finite")
        elif self.periods is not None:
            raise ValueError("spheres do not take periods")
        return self

    @classmethod
    def sphere(cls, dim: int = 2) -> "ManifoldModel":
        return cls(kind="sphere", dim=dim)

    @classmethod
    def torus(cls, dim: int = 2, periods: tuple[float, ...] | None = None) -> "ManifoldModel":
        return cls(kind="torus", dim=dim, periods=periods)

    @property
    def ambient_dim(self) -> int:
        """Length of the coordinate vector used for points."""
        return self.dim + 1 if self.kind == "sphere" else self.dim

    @property
    def total_volume(self) -> float:
        if self.kind == "sphere":
            n = self.dim
            return 2.0 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2)
        return float(np.prod(self.periods))


class SubmanifoldSpec(BaseModel):
    """
    A totally geodesic submanifold.

    great_subsphere: {x in S^n : x_{k+2} = ... = x_{n+1} = 0}, dimension k.
    pole_pair: the two points (0, ..., 0, +-1) of S^n, dimension 0.
    subtorus: coordinates flagged in mask are fixed to 0, the others are free.
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["great_subsphere", "pole_pair", "subtorus"]
    dim: int = Field(ge=0)
    ambient_dim: int = Field(ge=1)
    mask: tuple[bool, ...] | None = None

    @model_validator(mode="after")
    def _check_shape(self):
        n, k = self.ambient_dim, self.dim
        if self.kind == "great_subsphere":
            if not 1 <= k <= n - 1:
                raise ValueError(f"great subsphere needs 1 <= k <= n-1, got k={k}, n={n}")
        elif self.kind == "pole_pair":
            if k != 0:
                raise ValueError("pole pair has dimension 0")
        else:
            if self.mask is None or len(self.mask) != n:
                raise ValueError(f"subtorus mask must have length {n}")
            if not any(self.mask):
                raise ValueError("subtorus mask must fix at least one coordinate")
            if k != n - sum(self.mask):
                raise ValueError("subtorus dimension must equal the number of free axes")
        if self.mask is not None and self.kind != "subtorus":
            raise ValueError("only subtori take a mask")
        return self

    @classmethod
    def great_subsphere(cls, n: int = 2, k: int = 1) -> "SubmanifoldSpec":
        return cls(kind="great_subsphere", dim=k, ambient_dim=n)

    @classmethod
    def pole_pair(cls, n: int = 2) -> "SubmanifoldSpec":
        return cls(kind="pole_pair", dim=0, ambient_dim=n)

    @classmethod
    def subtorus(cls, mask: tuple[bool, ...]) -> "SubmanifoldSpec":
        mask = tuple(bool(m) for m in mask)
        return cls(kind="subtorus", dim=len(mask) - sum(mask), ambient_dim=len(mask), mask=mask)

    @property
    def codim(self) -> int:
        return self.ambient_dim - self.dim

    def check_on(self, manifold: ManifoldModel) -> None:
        """Raise IncompatibleSubmanifoldError unless this submanifold lives on manifold."""
        wanted = "torus" if self.kind == "subtorus" else "sphere"
        if manifold.kind != wanted or manifold.dim != self.ambient_dim:
            raise IncompatibleSubmanifoldError(
                f"{self.kind} of ambient dimension {self.ambient_dim} "
                f"does not live on a {manifold.kind} of dimension {manifold.dim}"
            )


class Tube(BaseModel):
    """The set of points within distance alpha * sqrt(h) of a submanifold."""

    model_config = ConfigDict(frozen=True)

    submanifold: SubmanifoldSpec
    alpha: float = Field(gt=0, le=1)
    h: float = Field(gt=0)

    @property
    def half_width(self) -> float:
        return self.alpha * math.sqrt(self.h)

    def contains(self, manifold: ManifoldModel, points: np.ndarray) -> np.ndarray:
        return distance_to_submanifold(manifold, self.submanifold, points) < self.half_width


def validate_points(manifold: ManifoldModel, points) -> np.ndarray:
    """
    Check that points lie on the manifold.

    Args:
        manifold: Target manifold
        points: Array of shape (..., ambient_dim)

    Returns:
        The points as a float array
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 0 or pts.shape[-1] != manifold.ambient_dim:
        raise OffManifoldError(
            f"expected coordinates of length {manifold.ambient_dim}, got shape {pts.shape}"
        )
    if not np.all(np.isfinite(pts)):
        raise OffManifoldError("points contain non-finite coordinates")
    if manifold.kind == "sphere":
        defect = np.max(np.abs(np.linalg.norm(pts, axis=-1) - 1.0), initial=0.0)
        if defect > POINT_TOLERANCE:
            raise OffManifoldError(f"points are off the unit sphere by {defect:.3e}")
    return pts


def _wrapped(delta: np.ndarray, periods: np.ndarray) -> np.ndarray:
    a = np.fmod(np.abs(delta), periods)
    return np.minimum(a, periods - a)


def geodesic_distance(manifold: ManifoldModel, p, q) -> np.ndarray:
    """Geodesic distance between points, broadcasting over leading axes."""
    p = validate_points(manifold, p)
    q = validate_points(manifold, q)
    if manifold.kind == "sphere":
        chord = np.linalg.norm(p - q, axis=-1)
        return 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))
    w = _wrapped(p - q, np.asarray(manifold.periods))
    return np.linalg.norm(w, axis=-1)


def distance_to_submanifold(manifold: ManifoldModel, submanifold: SubmanifoldSpec, p) -> np.ndarray:
    """
    Distance from points to a submanifold.

    Args:
        manifold: Ambient manifold
        submanifold: Submanifold living on manifold
        p: Points of shape (..., ambient_dim)

    Returns:
        Distances of shape (...), each in [0, diameter]
    """
    submanifold.check_on(manifold)
    p = validate_points(manifold, p)
    if submanifold.kind == "great_subsphere":
        k = submanifold.dim
        normal = np.linalg.norm(p[..., k + 1 :], axis=-1)
        tangent = np.linalg.norm(p[..., : k + 1], axis=-1)
        return np.arctan2(normal, tangent)
    if submanifold.kind == "pole_pair":
        return np.arctan2(np.linalg.norm(p[..., :-1], axis=-1), np.abs(p[..., -1]))
    mask = np.asarray(submanifold.mask)
    periods = np.asarray(manifold.periods)[mask]
    return np.linalg.norm(_wrapped(p[..., mask], periods), axis=-1)


class QuadratureGrid:
    """
    Nodes and positive weights on a manifold or on one tube.

    region is None for a grid covering the whole manifold, otherwise the tube the
    grid is adapted to. spacing is the node spacing in each normal direction used
    by the indicator resolution rule.
    """

    def __init__(
        self,
        manifold: ManifoldModel,
        nodes: np.ndarray,
        weights: np.ndarray,
        resolution: tuple[int, ...],
        region: Tube | None = None,
        exact_degree: int | None = None,
    ):
        self.manifold = manifold
        self.nodes = nodes
        self.weights = weights
        self.resolution = resolution
        self.region = region
        self.exact_degree = exact_degree
        nodes.setflags(write=False)
        weights.setflags(write=False)

    def __len__(self) -> int:
        return self.weights.shape[0]

    def grid_for(self, tube: Tube) -> "QuadratureGrid":
        """The grid to integrate over the given tube; a fixed grid serves every tube."""
        return self

    def full_grid(self) -> "QuadratureGrid":
        """
        The grid as a whole-manifold rule.

        Raises:
            UnderResolvedError: the grid is adapted to one tube
        """
        if self.region is not None:
            raise UnderResolvedError("tube-adapted grid does not cover the whole manifold")
        return self

    def integrate(self, values: np.ndarray) -> complex | float:
        """
        Weighted sum of node values.

        Args:
            values: One value per node

        Returns:
            sum_k w_k values_k, complex when the values are
        """
        return np.sum(self.weights * values)

    def normal_spacing(self, submanifold: SubmanifoldSpec) -> float:
        """Largest node spacing across the given submanifold."""
        if self.manifold.kind == "sphere":
            return math.pi / self.resolution[0]
        mask = np.asarray(submanifold.mask)
        spacings = np.asarray(self.manifold.periods) / np.asarray(self.resolution)
        return float(np.max(spacings[mask]))

    def check_tube_resolved(self, tube: Tube) -> None:
        """Raise UnderResolvedError when the tube indicator cannot be integrated on this grid."""
        if self.region is not None:
            if self.region != tube:
                raise UnderResolvedError(f"grid is adapted to {self.region}, not to {tube}")
            return
        spacing = self.normal_spacing(tube.submanifold)
        across = 2.0 * tube.half_width / spacing
        if across < MIN_NODES_ACROSS_TUBE:
            logger.error(f"Tube of half-width {tube.half_width:.4g} spans {across:.2f} nodes")
            raise UnderResolvedError(
                f"tube of half-width {tube.half_width:.4g} spans only {across:.2f} nodes "
                f"(need {MIN_NODES_ACROSS_TUBE}); refine the grid or use a tube-adapted grid"
            )

    def tube_mask(self, tube: Tube) -> np.ndarray:
        """
        Nodes that lie in the tube.

        Args:
            tube: Tube to integrate over

        Returns:
            Boolean mask over the nodes; all True on the tube's own adapted grid

        Raises:
            UnderResolvedError: the tube is too thin for this grid, or the grid is
                adapted to another tube
        """
        self.check_tube_resolved(tube)
        if self.region is not None:
            return np.ones(len(self), dtype=bool)
        return tube.contains(self.manifold, self.nodes)


def _sphere_nodes(x: np.ndarray, phi: np.ndarray) -> np.ndarray:
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    xx, pp = np.meshgrid(x, phi, indexing="ij")
    ss = np.broadcast_to(s[:, None], xx.shape)
    nodes = np.stack([ss * np.cos(pp), ss * np.sin(pp), xx], axis=-1).reshape(-1, 3)
    # renormalize so nodes pass the on-sphere check exactly
    return nodes / np.linalg.norm(nodes, axis=-1, keepdims=True)


def _sphere_resolution(resolution) -> tuple[int, int]:
    if isinstance(resolution, int):
        resolution = (resolution, 2 * resolution)
    n_x, n_phi = (int(r) for r in resolution)
    if n_x < 1 or n_phi < 1:
        raise UnderResolvedError(f"resolution must be positive, got {resolution}")
    return n_x, n_phi


def _torus_resolution(manifold: ManifoldModel, resolution) -> tuple[int, ...]:
    if isinstance(resolution, int):
        resolution = (resolution,) * manifold.dim
    resolution = tuple(int(r) for r in resolution)
    if len(resolution) != manifold.dim or min(resolution) < 1:
        raise UnderResolvedError(f"torus of dimension {manifold.dim} needs positive counts")
    return resolution


def _require_s2(manifold: ManifoldModel) -> None:
    if manifold.kind == "sphere" and manifold.dim != 2:
        raise UnsupportedError(
            f"quadrature on S^{manifold.dim} is not implemented; use closed forms for S^n, n > 2"
        )


def build_grid(
    manifold: ManifoldModel, resolution, exact_degree: int | None = None
) -> QuadratureGrid:
    """
    Build a quadrature grid covering the whole manifold.

    On S^2 this is Gauss-Legendre in cos(theta) times a uniform azimuthal rule; on a
    torus it is the uniform rule. exact_degree records the highest harmonic degree
    (or integer frequency on tori) whose pairwise products the grid integrates exactly.

    Args:
        manifold: Sphere S^2 or any flat torus
        resolution: (n_theta, n_phi) on S^2, per-axis counts on a torus
        exact_degree: If given, raise UnderResolvedError unless the grid is exact to it

    Returns:
        QuadratureGrid with region None
    """
    _require_s2(manifold)
    if manifold.kind == "sphere":
        n_x, n_phi = _sphere_resolution(resolution)
        x, w = leggauss(n_x)
        phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
        nodes = _sphere_nodes(x, phi)
        weights = np.repeat(w * (2.0 * math.pi / n_phi), n_phi)
        grid = QuadratureGrid(
            manifold, nodes, weights, (n_x, n_phi), exact_degree=min(n_x - 1, (n_phi - 1) // 2)
        )
    else:
        counts = _torus_resolution(manifold, resolution)
        axes = [p * np.arange(c) / c for p, c in zip(manifold.periods, counts, strict=True)]
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=-1)
        cell = float(np.prod(np.asarray(manifold.periods) / np.asarray(counts)))
        weights = np.full(nodes.shape[0], cell)
        grid = QuadratureGrid(manifold, nodes, weights, counts, exact_degree=(min(counts) - 1) // 2)

    if exact_degree is not None and grid.exact_degree < exact_degree:
        raise UnderResolvedError(
            f"grid {grid.resolution} is exact to degree {grid.exact_degree}, "
            f"basis needs {exact_degree}"
        )
    logger.debug(f"Built {manifold.kind} grid {grid.resolution} with {len(grid)} nodes")
    return grid


def _mapped_gauss(lo: float, hi: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    t, w = leggauss(n)
    half = 0.5 * (hi - lo)
    return lo + half * (t + 1.0), half * w


def build_tube_grid(manifold: ManifoldModel, tube: Tube, resolution) -> QuadratureGrid:
    """
    Build a grid whose nodes all lie in the tube.

    On S^2 the equatorial band uses Gauss-Legendre in x3 over [-sin b, sin b] and the
    polar caps use Gauss-Legendre on [cos b, 1] and [-1, -cos b]. On a torus the fixed
    axes use Gauss-Legendre on [-b, b] and the free axes the uniform rule. When the
    half-width b reaches the diameter the grid covers the whole manifold.
    """
    sub = tube.submanifold
    sub.check_on(manifold)
    _require_s2(manifold)
    beta = tube.half_width

    if manifold.kind == "sphere":
        n_x, n_phi = _sphere_resolution(resolution)
        b = min(beta, math.pi / 2)
        if sub.kind == "great_subsphere":
            s = math.sin(b)
            x, w = _mapped_gauss(-s, s, n_x)
        else:
            c = math.cos(b)
            x_top, w_top = _mapped_gauss(c, 1.0, n_x)
            x, w = np.concatenate([-x_top[::-1], x_top]), np.concatenate([w_top[::-1], w_top])
        phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
        nodes = _sphere_nodes(x, phi)
        weights = np.repeat(w * (2.0 * math.pi / n_phi), n_phi)
        # points at exactly distance b are dropped by the open-tube convention
        inside = tube.contains(manifold, nodes) | (beta >= math.pi / 2)
        return QuadratureGrid(manifold, nodes[inside], weights[inside], (n_x, n_phi), tube)

    counts = _torus_resolution(manifold, resolution)
    periods = np.asarray(manifold.periods)
    mask = np.asarray(sub.mask)
    if np.all(2.0 * beta >= periods[mask]):
        full = build_grid(manifold, counts)
        return QuadratureGrid(manifold, full.nodes.copy(), full.weights.copy(), counts, tube)

    free_axes = [
        (period * np.arange(count) / count, np.full(count, period / count))
        for period, count, fixed in zip(periods, counts, mask, strict=True)
        if not fixed
    ]
    normal_counts = [c for c, fixed in zip(counts, mask, strict=True) if fixed]
    if sub.codim == 1:
        x, w = _mapped_gauss(-beta, beta, normal_counts[0])
        normal_nodes, normal_weights = x[:, None], w
    elif sub.codim == 2 and np.all(2.0 * beta < periods[mask]):
        # polar rule on the normal disk
        r, wr = _mapped_gauss(0.0, beta, normal_counts[0])
        theta = 2.0 * math.pi * np.arange(normal_counts[1]) / normal_counts[1]
        rr, tt = np.meshgrid(r, theta, indexing="ij")
        normal_nodes = np.stack([(rr * np.cos(tt)).ravel(), (rr * np.sin(tt)).ravel()], axis=-1)
        normal_weights = np.repeat(wr * r * (2.0 * math.pi / normal_counts[1]), normal_counts[1])
    else:
        raise UnsupportedError(
            f"tube-adapted grids on tori support codimension 1 and 2, got {sub.codim}; "
            "use a uniform grid with the indicator"
        )

    free_mesh = np.meshgrid(*[a for a, _ in free_axes], indexing="ij")
    free_wmesh = np.meshgrid(*[w for _, w in free_axes], indexing="ij")
    free_nodes = np.stack([m.ravel() for m in free_mesh], axis=-1)
    free_weights = np.prod(np.stack([m.ravel() for m in free_wmesh], axis=-1), axis=-1)

    n_normal, n_free = normal_nodes.shape[0], free_nodes.shape[0]
    nodes = np.empty((n_normal * n_free, manifold.dim))
    nodes[:, mask] = np.repeat(normal_nodes, n_free, axis=0)
    nodes[:, ~mask] = np.tile(free_nodes, (n_normal, 1))
    weights = np.repeat(normal_weights, n_free) * np.tile(free_weights, n_normal)
    return QuadratureGrid(manifold, nodes, weights, counts, tube)


class TubeQuadrature:
    """Hands out tube-adapted grids on demand, cached per tube."""

    def __init__(self, manifold: ManifoldModel, resolution, full_resolution=None):
        self.manifold = manifold
        self.resolution = resolution
        self.full_resolution = full_resolution
        self._cache: dict[Tube, QuadratureGrid] = {}
        self.region = None

    def grid_for(self, tube: Tube) -> QuadratureGrid:
        if tube not in self._cache:
            self._cache[tube] = build_tube_grid(self.manifold, tube, self.resolution)
        return self._cache[tube]

    def full_grid(self) -> QuadratureGrid:
        if self.full_resolution is None:
            raise UnderResolvedError("no whole-manifold resolution configured")
        return build_grid(self.manifold, self.full_resolution)


def tube_volume(
    manifold: ManifoldModel, tube: Tube, grid: QuadratureGrid | TubeQuadrature
) -> float:
    """
    Riemannian volume of a tube.

    Raises:
        UnderResolvedError: fewer than four nodes span the tube in a normal direction
    """
    tube.submanifold.check_on(manifold)
    g = grid.grid_for(tube)
    mask = g.tube_mask(tube)
    return float(np.sum(g.weights[mask]))
