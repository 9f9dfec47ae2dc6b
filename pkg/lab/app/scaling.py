"""
Power-law regression for empirical exponents.
"""

import logging
from typing import Literal

import numpy as np
from pydantic import BaseModel

from app.errors import FitError

logger = logging.getLogger(__name__)


class ScalingFit(BaseModel):
    """Least-squares fit of log y = intercept + slope * log x (+ log log(1/x))."""

    model: Literal["pure_power", "power_times_log"]
    slope: float
    intercept: float
    r_squared: float
    max_residual: float
    sample_count: int

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        log_y = self.intercept + self.slope * np.log(x)
        if self.model == "power_times_log":
            log_y = log_y + np.log(np.log(1.0 / x))
        return np.exp(log_y)


def fit_power_law(x, y, model: str = "pure_power") -> ScalingFit:
    """
    Fit y ~ c x^s, or y ~ c x^s log(1/x) for the power_times_log model.

    Args:
        x: Positive, distinct abscissae (at least 3)
        y: Positive ordinates
        model: "pure_power" or "power_times_log"

    Returns:
        ScalingFit with slope s and intercept log c
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise FitError(f"abscissae and ordinates differ in length: {x.size} vs {y.size}")
    if x.size < 3:
        raise FitError(f"need at least 3 samples, got {x.size}")
    if np.unique(x).size != x.size:
        raise FitError("abscissae must be distinct")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise FitError("samples must be finite")
    if np.any(x <= 0) or np.any(y <= 0):
        raise FitError("power-law fit needs positive samples")

    log_x, log_y = np.log(x), np.log(y)
    if model == "power_times_log":
        if np.any(x >= 1):
            raise FitError("power_times_log needs abscissae below 1")
        log_y = log_y - np.log(np.log(1.0 / x))
    elif model != "pure_power":
        raise FitError(f"unknown model {model!r}")

    design = np.column_stack([np.ones_like(log_x), log_x])
    (intercept, slope), *_ = np.linalg.lstsq(design, log_y, rcond=None)
    residuals = log_y - (intercept + slope * log_x)
    ss_res = float(np.sum(residuals**2))
    ss_tot = float(np.sum((log_y - log_y.mean()) ** 2))
    if ss_tot > 0:
        r_squared = 1.0 - ss_res / ss_tot
    else:
        r_squared = 1.0 if ss_res < 1e-24 else 0.0

    fit = ScalingFit(
        model=model,
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r_squared,
        max_residual=float(np.max(np.abs(residuals))),
        sample_count=int(x.size),
    )
    logger.debug(f"Fitted {model}: slope={fit.slope:.6g}, r2={fit.r_squared:.6g}")
    return fit
