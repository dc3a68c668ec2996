"""
Positive semidefinite adjustment of tabulated correlation curves.

The forward transform 2 * int_0^Dmax rho(d) w(d) cos(theta d) dd and the
inverse (1/pi) * int_0^theta_max max(F, 0) cos(theta d) dtheta are both
trapezoid sums on uniform grids. With the default frequency grid the pair
is an exact discrete cosine transform, so unclipped curves round-trip.
"""

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import fft

from app.core.errors import ConfigError, EstimationError, ShapeMismatch, TaperExceedsGrid
from app.models.estimate import CorrelationCurve
from app.models.psd import (
    AdjustedCurve,
    IndicatorTaper,
    LinearTaper,
    NoTaper,
    TaperWeight,
    TransformGrid,
)

logger = logging.getLogger(__name__)


def taper_values(taper: TaperWeight, deltas) -> np.ndarray:
    a = np.abs(np.asarray(deltas, dtype=float))
    if isinstance(taper, IndicatorTaper):
        return np.where(a <= taper.d, 1.0, 0.0)
    if isinstance(taper, LinearTaper):
        if taper.d2 == taper.d1:
            return np.where(a < taper.d1, 1.0, 0.0)
        ramp = (taper.d2 - a) / (taper.d2 - taper.d1)
        return np.where(a < taper.d1, 1.0, np.where(a <= taper.d2, ramp, 0.0))
    return np.ones_like(a)


def taper_eval(taper: TaperWeight, delta: float) -> float:
    return float(taper_values(taper, delta))


def default_taper(delta_max: float) -> LinearTaper:
    return LinearTaper(d1=0.6 * delta_max, d2=delta_max)


def trapezoid_weights(n: int, step: float) -> np.ndarray:
    weights = np.full(n, step)
    weights[0] = weights[-1] = step / 2.0
    if n == 1:
        weights[0] = 0.0
    return weights


def _lag_grid(delta_grid: Sequence[float], grid: Optional[TransformGrid]) -> Tuple[np.ndarray, TransformGrid]:
    d = np.asarray(delta_grid, dtype=float)
    if d.size < 2 or d[0] != 0:
        raise ConfigError("tabulated curves need at least two lags starting at 0")
    step = (d[-1] - d[0]) / (d.size - 1)
    if not np.allclose(np.diff(d), step, rtol=1e-9, atol=0):
        raise ConfigError("tabulated curves need a uniform lag grid")
    if grid is None:
        return d, TransformGrid.for_lags(step, float(d[-1]))
    if not (np.isclose(grid.delta_step, step, rtol=1e-9) and np.isclose(grid.delta_max, d[-1], rtol=1e-9)):
        raise ShapeMismatch(
            f"transform grid (step {grid.delta_step:g}, max {grid.delta_max:g}) does not match "
            f"the tabulated lags (step {step:g}, max {d[-1]:g})"
        )
    return d, grid


def _weighted_input(d: np.ndarray, rho, taper: TaperWeight) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.shape != d.shape:
        raise ShapeMismatch(f"{rho.size} values for {d.size} lags")
    w = taper_values(taper, d)
    if not isinstance(taper, NoTaper) and w[-1] != 0:
        raise TaperExceedsGrid(
            f"taper is {w[-1]:g} at the last tabulated lag {d[-1]:g}; extend the grid or shorten the taper"
        )
    active = w > 0
    if not np.all(np.isfinite(rho[active])):
        raise EstimationError("correlation curve has missing values where the taper is nonzero")
    return np.where(active, rho, 0.0) * w


def is_dct_grid(grid: TransformGrid, n_lags: int) -> bool:
    """True when theta_k d_j = pi j k / (n - 1), i.e. the trapezoid sums are a DCT-I"""
    return (
        n_lags > 1
        and grid.theta_points.size == n_lags
        and math.isclose(grid.theta_step * grid.delta_max, math.pi, rel_tol=1e-12)
        and math.isclose(grid.theta_max * grid.delta_step, math.pi, rel_tol=1e-12)
    )


def cosine_transform(
    delta_grid: Sequence[float],
    rho: Sequence[float],
    taper: Optional[TaperWeight] = None,
    grid: Optional[TransformGrid] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """(theta grid, 2 * int rho w cos) by trapezoid quadrature"""
    d, grid = _lag_grid(delta_grid, grid)
    f = _weighted_input(d, rho, taper or NoTaper())
    theta = grid.theta_points
    if is_dct_grid(grid, d.size):
        return theta, grid.delta_step * fft.dct(f, type=1)
    return theta, 2.0 * np.cos(np.outer(theta, d)) @ (trapezoid_weights(d.size, grid.delta_step) * f)


def _inverse(theta: np.ndarray, weights: np.ndarray, spectrum: np.ndarray, deltas) -> np.ndarray:
    deltas = np.abs(np.atleast_1d(np.asarray(deltas, dtype=float)))
    clipped = np.maximum(spectrum, 0.0)
    return np.cos(np.outer(deltas, theta)) @ (weights * clipped) / np.pi


def psd_adjust(
    delta_grid: Sequence[float],
    rho: Sequence[float],
    taper: Optional[TaperWeight] = None,
    grid: Optional[TransformGrid] = None,
) -> AdjustedCurve:
    """Forward transform, clip negative frequencies, transform back"""
    d = np.asarray(delta_grid, dtype=float)
    if taper is None and d.size:
        taper = default_taper(float(d[-1]))
    d, grid = _lag_grid(d, grid)
    theta, spectrum = cosine_transform(d, rho, taper, grid)
    weights = trapezoid_weights(theta.size, grid.theta_step)
    if is_dct_grid(grid, d.size):
        adjusted = grid.theta_step * fft.dct(np.maximum(spectrum, 0.0), type=1) / (2.0 * np.pi)
    else:
        adjusted = _inverse(theta, weights, spectrum, d)
    negative = spectrum < 0
    if negative.any():
        logger.info(f"clipped {int(negative.sum())} of {theta.size} negative spectral values")
    return AdjustedCurve(
        delta_grid=d,
        input_rho=np.asarray(rho, dtype=float),
        adjusted=adjusted,
        theta_grid=theta,
        spectrum=spectrum,
        theta_weights=weights,
    )


def evaluate_adjusted(adjusted: AdjustedCurve, delta) -> np.ndarray:
    """rho-tilde at arbitrary lags from the clipped spectrum"""
    return _inverse(adjusted.theta_grid, adjusted.theta_weights, adjusted.spectrum, delta)


class PsdService:
    """Attaches PSD-adjusted companions to correlation curves"""

    def adjust_curve(
        self,
        curve: CorrelationCurve,
        taper: Optional[TaperWeight] = None,
        grid: Optional[TransformGrid] = None,
    ) -> Tuple[CorrelationCurve, AdjustedCurve]:
        try:
            adjusted = psd_adjust(curve.delta_grid, curve.rho, taper, grid)
        except EstimationError as e:
            logger.error(f"PSD adjustment failed: {e}")
            raise
        return curve.model_copy(update={"adjusted": adjusted.adjusted}), adjusted


# Global service instance
psd_service = PsdService()


def get_psd_service() -> PsdService:
    """Dependency for FastAPI to get the PSD service"""
    return psd_service
