"""
Fully normalized associated Legendre functions and real spherical harmonics on S^2.
"""

import math

import numpy as np


def legendre_column(m: int, lmax: int, x: np.ndarray) -> np.ndarray:
    """
    Normalized associated Legendre functions q_l^m(x) for l = m..lmax.

    q_l^m(cos t) * cos(m p) * sqrt(2) (or sin) is an L2-normalized real harmonic on S^2,
    q_l^0(cos t) is the normalized zonal harmonic.

    Args:
        m: Order, 0 <= m <= lmax
        lmax: Highest degree
        x: Points in [-1, 1]

    Returns:
        Array of shape (lmax - m + 1, len(x))
    """
    x = np.asarray(x, dtype=float).ravel()
    out = np.zeros((lmax - m + 1, x.size))
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    pmm = np.full(x.size, math.sqrt(1.0 / (4.0 * math.pi)))
    for i in range(1, m + 1):
        pmm = pmm * (math.sqrt((2 * i + 1) / (2 * i)) * s)
    out[0] = pmm
    if lmax > m:
        out[1] = math.sqrt(2 * m + 3) * x * pmm
    for deg in range(m + 2, lmax + 1):
        a = math.sqrt((4 * deg * deg - 1) / (deg * deg - m * m))
        b = math.sqrt(((deg - 1) ** 2 - m * m) / (4 * (deg - 1) ** 2 - 1))
        out[deg - m] = a * (x * out[deg - m - 1] - b * out[deg - m - 2])
    return out


def zonal(j: int, x: np.ndarray) -> np.ndarray:
    """Normalized zonal harmonic sqrt((2j+1)/4pi) P_j(x)."""
    return legendre_column(0, j, x)[-1]


def sphere_modes(lmax: int) -> np.ndarray:
    """(l, m) pairs ordered by degree, then by m from -l to l."""
    return np.array([(deg, m) for deg in range(lmax + 1) for m in range(-deg, deg + 1)], dtype=int)


def real_harmonics(lmax: int, points: np.ndarray) -> np.ndarray:
    """
    Evaluate every real harmonic of degree <= lmax.

    Args:
        lmax: Highest degree
        points: Unit vectors of shape (N, 3)

    Returns:
        Matrix of shape (N, (lmax + 1)^2), columns in sphere_modes order
    """
    x = points[:, 2]
    phi = np.arctan2(points[:, 1], points[:, 0])
    out = np.empty((points.shape[0], (lmax + 1) ** 2))
    for m in range(lmax + 1):
        q = legendre_column(m, lmax, x)
        if m == 0:
            for deg in range(lmax + 1):
                out[:, deg * deg + deg] = q[deg]
            continue
        c = math.sqrt(2.0) * np.cos(m * phi)
        s = math.sqrt(2.0) * np.sin(m * phi)
        for deg in range(m, lmax + 1):
            out[:, deg * deg + deg + m] = q[deg - m] * c
            out[:, deg * deg + deg - m] = q[deg - m] * s
    return out
