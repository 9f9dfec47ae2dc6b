"""
Damped wave module for the tube concentration lab.
Galerkin integration of u_tt - Laplacian u + b u_t = 0 in a truncated eigenbasis,
energy traces, and polynomial decay certificates.

The first-order system y' = A y with A = [[0, I], [-Lambda, -B]] is advanced by the
implicit midpoint rule. Propagators (I - dt/2 A)^-1 (I + dt/2 A) are formed once per
Gram block from an LU factorization, padded to a common size and applied in batch.
"""

import logging
import math
from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel
from scipy.linalg import lu_factor, lu_solve

from app.errors import FitError, SimulationError, TruncationError
from app.resolvent import DampingProfile, GramOperator, gram_blocks
from app.scaling import fit_power_law
from app.spectral import SMOOTH_WINDOW_REACH, ModeVector, SpectralBasis, sobolev_norm

logger = logging.getLogger(__name__)

# Largest dt * max frequency accepted; beyond it the midpoint phase error dominates
DEFAULT_MAX_PHASE = 2.0
MONOTONE_TOLERANCE = 1e-10


class WaveState:
    """Position and velocity coefficients at time t."""

    def __init__(self, basis: SpectralBasis, u, v, t: float = 0.0):
        self.basis = basis
        self.u = np.array(u, dtype=complex)
        self.v = np.array(v, dtype=complex)
        self.t = t
        if self.u.shape != (basis.size,) or self.v.shape != (basis.size,):
            raise ValueError(f"state needs {basis.size} coefficients per component")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise SimulationError("state has non-finite coefficients")

    def scaled(self, factor: complex) -> "WaveState":
        return WaveState(self.basis, self.u * factor, self.v * factor, self.t)

    def data_norm(self) -> float:
        """||u||_{H^2} + ||v||_{H^1}."""
        return sobolev_norm(ModeVector(self.basis, self.u), 2) + sobolev_norm(
            ModeVector(self.basis, self.v), 1
        )


def energy(state: WaveState, eigenvalues: np.ndarray | None = None) -> float:
    """<Lambda u, u> + ||v||^2."""
    eig = state.basis.eigenvalues if eigenvalues is None else eigenvalues
    return float(np.sum(eig * np.abs(state.u) ** 2) + np.sum(np.abs(state.v) ** 2))


class EnergyTrace:
    """Sampled energy of one simulation."""

    def __init__(
        self,
        times,
        energies,
        dissipation_rates=None,
        dissipated=None,
        data_norm: float = 1.0,
        damping: str = "",
        kappa: float | None = None,
        final_state: WaveState | None = None,
    ):
        self.times = np.asarray(times, dtype=float)
        self.energies = np.asarray(energies, dtype=float)
        self.dissipation_rates = (
            None if dissipation_rates is None else np.asarray(dissipation_rates, dtype=float)
        )
        self.dissipated = None if dissipated is None else np.asarray(dissipated, dtype=float)
        self.data_norm = data_norm
        self.damping = damping
        self.kappa = kappa
        self.final_state = final_state
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trace times must be strictly increasing")

    def rows(self, kappa: float | None = None) -> list[tuple[float, float, float]]:
        """(t, E, sqrt(E) t^(1/kappa)) rows."""
        kappa = kappa or self.kappa or 1.0
        return [
            (float(t), float(e), math.sqrt(max(e, 0.0)) * t ** (1.0 / kappa))
            for t, e in zip(self.times, self.energies, strict=True)
        ]

    def dissipation_defect(self) -> float:
        """Max |E(t_k+1) - E(t_k) + trapezoid of 2<Bv,v>| between consecutive samples."""
        if self.dissipation_rates is None or len(self.times) < 2:
            return 0.0
        dt = np.diff(self.times)
        trapezoid = 0.5 * dt * (self.dissipation_rates[1:] + self.dissipation_rates[:-1])
        return float(np.max(np.abs(np.diff(self.energies) + trapezoid)))

    def balance_defect(self) -> float:
        """Max |E(0) - E(t_k) - dissipated(t_k)| / E(0) over the samples."""
        if self.dissipated is None:
            return 0.0
        e0 = float(self.energies[0])
        if e0 <= 0:
            return 0.0
        return float(np.max(np.abs(e0 - self.energies - self.dissipated))) / e0

    def is_monotone(self, tolerance: float = MONOTONE_TOLERANCE) -> bool:
        """Whether sampled energies never rise by more than tolerance * E(0)."""
        if len(self.energies) < 2:
            return True
        slack = tolerance * max(float(self.energies[0]), 1.0)
        return bool(np.all(np.diff(self.energies) <= slack))


class _BatchedPropagator:
    """Implicit midpoint propagators for every Gram block, padded to one size."""

    def __init__(self, eigenvalues: np.ndarray, gram: GramOperator, dt: float):
        self.indices = [idx for idx, _ in gram.blocks]
        width = max(len(idx) for idx in self.indices)
        count = len(self.indices)
        self.width = width
        self.P = np.zeros((count, 2 * width, 2 * width), dtype=complex)
        self.B = np.zeros((count, width, width), dtype=complex)
        self.lam = np.zeros((count, width))
        for s, (idx, block) in enumerate(gram.blocks):
            d = len(idx)
            A = np.zeros((2 * d, 2 * d), dtype=complex)
            A[:d, d:] = np.eye(d)
            A[d:, :d] = -np.diag(eigenvalues[idx])
            A[d:, d:] = -block
            ident = np.eye(2 * d)
            P = lu_solve(lu_factor(ident - 0.5 * dt * A), ident + 0.5 * dt * A)
            sel = np.concatenate([np.arange(d), width + np.arange(d)])
            self.P[s] = np.eye(2 * width)
            self.P[s][np.ix_(sel, sel)] = P
            self.B[s, :d, :d] = block
            self.lam[s, :d] = eigenvalues[idx]

    def pack(self, state: WaveState) -> np.ndarray:
        y = np.zeros((len(self.indices), 2 * self.width), dtype=complex)
        for s, idx in enumerate(self.indices):
            y[s, : len(idx)] = state.u[idx]
            y[s, self.width : self.width + len(idx)] = state.v[idx]
        return y

    def unpack(self, y: np.ndarray, basis: SpectralBasis, t: float) -> WaveState:
        u = np.zeros(basis.size, dtype=complex)
        v = np.zeros(basis.size, dtype=complex)
        for s, idx in enumerate(self.indices):
            u[idx] = y[s, : len(idx)]
            v[idx] = y[s, self.width : self.width + len(idx)]
        return WaveState(basis, u, v, t)

    def step(self, y: np.ndarray) -> np.ndarray:
        return np.matmul(self.P, y[..., None])[..., 0]

    def energy(self, y: np.ndarray) -> float:
        u, v = y[:, : self.width], y[:, self.width :]
        return float(np.sum(self.lam * np.abs(u) ** 2) + np.sum(np.abs(v) ** 2))

    def damping_rate(self, v: np.ndarray) -> float:
        """2 <B v, v>."""
        bv = np.matmul(self.B, v[..., None])[..., 0]
        return 2.0 * float(np.sum(np.conj(v) * bv).real)


def simulate(
    initial: WaveState,
    eigenvalues: np.ndarray,
    gram: GramOperator,
    T: float,
    dt: float,
    stride: int = 1,
    max_phase: float = DEFAULT_MAX_PHASE,
    damping: str = "",
    kappa: float | None = None,
) -> EnergyTrace:
    """
    Integrate the damped wave system to time T.

    Args:
        initial: State at t = 0
        eigenvalues: lambda_j^2 of the basis
        gram: Damping Gram operator of the same basis
        T: Final time
        dt: Step size
        stride: Record every stride-th step
        max_phase: Largest accepted dt * max frequency

    Returns:
        EnergyTrace sampled at t = 0, stride*dt, ..., T

    Raises:
        SimulationError: step too large for the truncation, or energy growth
    """
    if T <= 0 or dt <= 0 or stride < 1:
        raise SimulationError(f"need T > 0, dt > 0, stride >= 1 (got {T}, {dt}, {stride})")
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    phase = dt * math.sqrt(float(np.max(eigenvalues)))
    if phase > max_phase:
        logger.error(f"Step phase {phase:.3g} exceeds {max_phase}")
        raise SimulationError(
            f"dt * max frequency = {phase:.3g} exceeds {max_phase}; reduce dt or the truncation"
        )
    n_steps = int(round(T / dt))
    prop = _BatchedPropagator(eigenvalues, gram, dt)
    y = prop.pack(initial)
    e_prev = prop.energy(y)
    e0 = e_prev
    times, energies, dissipated = [0.0], [e_prev], [0.0]
    rates = [prop.damping_rate(y[:, prop.width :])]
    lost = 0.0

    for n in range(1, n_steps + 1):
        y_next = prop.step(y)
        v_mid = 0.5 * (y[:, prop.width :] + y_next[:, prop.width :])
        lost += dt * prop.damping_rate(v_mid)
        y = y_next
        e = prop.energy(y)
        if e > e_prev + MONOTONE_TOLERANCE * max(e0, 1.0):
            logger.error(f"Energy grew from {e_prev:.6g} to {e:.6g} at step {n}")
            raise SimulationError(f"energy grew at t={n * dt:.4g}: {e_prev:.12g} -> {e:.12g}")
        if not math.isfinite(e):
            raise SimulationError(f"energy became non-finite at t={n * dt:.4g}")
        e_prev = e
        if n % stride == 0 or n == n_steps:
            times.append(n * dt)
            energies.append(e)
            rates.append(prop.damping_rate(y[:, prop.width :]))
            dissipated.append(lost)

    logger.info(f"Simulated {n_steps} steps to T={n_steps * dt:.4g}: E {e0:.6g} -> {e_prev:.6g}")
    return EnergyTrace(
        times,
        energies,
        rates,
        dissipated,
        data_norm=initial.data_norm(),
        damping=damping,
        kappa=kappa,
        final_state=prop.unpack(y, initial.basis, n_steps * dt),
    )


def undamped_gram(basis: SpectralBasis) -> GramOperator:
    """Zero damping, one block per mode."""
    return GramOperator(
        basis.size, [(np.array([j]), np.zeros((1, 1), dtype=complex)) for j in range(basis.size)]
    )


def windowed_initial_data(
    basis: SpectralBasis, frequency: float, width: float, seed: int
) -> WaveState:
    """
    Gaussian spectral window around frequency with seeded random phases,
    normalized so that ||u0||_{H^2} + ||u1||_{H^1} = 1.
    """
    reach = frequency + SMOOTH_WINDOW_REACH * width
    if reach > basis.complete_frequency:
        raise TruncationError(
            f"data window reaches {reach:.4g}, basis complete below {basis.complete_frequency:.4g}"
        )
    rng = np.random.default_rng(seed)
    envelope = np.exp(-(((basis.frequencies - frequency) / width) ** 2))
    u = envelope * np.exp(2j * math.pi * rng.random(basis.size))
    v = envelope * np.exp(2j * math.pi * rng.random(basis.size))
    state = WaveState(basis, u, v)
    return state.scaled(1.0 / state.data_norm())


class TimeReversalReport(BaseModel):
    T: float
    dt: float
    defect: float
    passed: bool


def time_reversal(
    state: WaveState, eigenvalues: np.ndarray, T: float, dt: float, tolerance: float = 1e-8
) -> TimeReversalReport:
    """Integrate the undamped system to T and back; relative return defect."""
    gram = undamped_gram(state.basis)
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    n_steps = int(round(T / dt))
    forward = _BatchedPropagator(eigenvalues, gram, dt)
    backward = _BatchedPropagator(eigenvalues, gram, -dt)
    y0 = forward.pack(state)
    y = y0
    for _ in range(n_steps):
        y = forward.step(y)
    for _ in range(n_steps):
        y = backward.step(y)
    scale = max(float(np.linalg.norm(y0)), 1e-300)
    defect = float(np.linalg.norm(y - y0)) / scale
    return TimeReversalReport(T=T, dt=dt, defect=defect, passed=defect < tolerance)


class DecayCertificate(BaseModel):
    kappa: float
    t0: float
    t_max: float
    C_star: float
    slope: float | None
    sample_count: int


def decay_fit(
    trace: EnergyTrace, kappa: float, t0: float, t_max: float | None = None
) -> DecayCertificate:
    """
    C* = sup_{t0 <= t <= t_max} E(t)^(1/2) t^(1/kappa) / (||u0||_{H^2} + ||u1||_{H^1})
    and the log-log slope of E^(1/2) over the same window.
    """
    t_max = float(trace.times[-1]) if t_max is None else t_max
    window = (trace.times >= t0) & (trace.times <= t_max) & (trace.times > 0)
    if not np.any(window):
        raise FitError(f"no samples in [{t0}, {t_max}]")
    t = trace.times[window]
    root = np.sqrt(np.clip(trace.energies[window], 0.0, None))
    weighted = root * t ** (1.0 / kappa)
    c_star = float(np.max(weighted)) / trace.data_norm if trace.data_norm > 0 else 0.0
    positive = root > 0
    slope = None
    if np.count_nonzero(positive) >= 3:
        slope = fit_power_law(t[positive], root[positive]).slope
    return DecayCertificate(
        kappa=kappa, t0=t0, t_max=t_max, C_star=c_star, slope=slope, sample_count=int(t.size)
    )


class StabiReport(BaseModel):
    kappa0: float
    patches: list[str]
    horizons: list[float]
    certificates: list[DecayCertificate]
    growth_ratios: list[float]
    passed: bool


def stabi_scenario(
    damping: DampingProfile,
    data: WaveState,
    horizons: Sequence[float],
    dt: float,
    stride: int = 10,
    kappa_default: float = 1.0,
    max_phase: float = DEFAULT_MAX_PHASE,
) -> tuple[EnergyTrace, StabiReport]:
    """
    Run the composite damping and certify decay against exponent 1/kappa0.

    kappa0 is the largest patch kappa; damping without vanishing patches uses
    kappa_default. Each horizon T is certified on the window [T/2, T]; the scenario
    passes when no certificate grows by a factor 2 or more from one horizon to the next.
    """
    horizons = sorted(float(T) for T in horizons)
    kappa0 = damping.kappa0 or kappa_default
    basis = data.basis
    gram = gram_blocks(damping, basis)
    trace = simulate(
        data,
        basis.eigenvalues,
        gram,
        horizons[-1],
        dt,
        stride=stride,
        max_phase=max_phase,
        damping=damping.describe(),
        kappa=kappa0,
    )
    certs = [decay_fit(trace, kappa0, t0=T / 2, t_max=T) for T in horizons]
    ratios = [
        later.C_star / earlier.C_star if earlier.C_star > 0 else 0.0
        for earlier, later in zip(certs, certs[1:], strict=False)
    ]
    if damping.form == "patch_max":
        patches = [p.describe() for p in damping.patches]
    else:
        patches = [damping.describe()]
    report = StabiReport(
        kappa0=kappa0,
        patches=patches,
        horizons=horizons,
        certificates=certs,
        growth_ratios=ratios,
        passed=all(r < 2.0 for r in ratios),
    )
    logger.info(f"Scenario kappa0={kappa0:g}: C* per horizon {[c.C_star for c in certs]}")
    return trace, report
