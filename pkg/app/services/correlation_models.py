"""
Parametric and tabulated correlation functions, their second derivatives,
the asymptotic bias of rho-hat and the best Matern approximation of a curve
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import interpolate, optimize, special

from app.core.errors import BiasUndefined, EstimationError
from app.core.kernels import kernel_moments
from app.models.kernel import KernelSpec
from app.models.psd import NoTaper, TransformGrid
from app.models.simulation import (
    CorrelationFunctionSpec,
    MaternCorrelation,
    Sim3Correlation,
    TabulatedCorrelation,
)
from app.services.psd import cosine_transform

logger = logging.getLogger(__name__)


def matern(delta, phi: float, kappa: float) -> np.ndarray:
    """{2^(k-1) Gamma(k)}^-1 (d/phi)^k K_k(d/phi); 1 at d = 0"""
    u = np.abs(np.asarray(delta, dtype=float)) / phi
    if kappa == 0.5:
        return np.exp(-u)
    if kappa == 1.5:
        return (1.0 + u) * np.exp(-u)
    if kappa == 2.5:
        return (1.0 + u + u * u / 3.0) * np.exp(-u)
    return matern_bessel(delta, phi, kappa)


def matern_bessel(delta, phi: float, kappa: float) -> np.ndarray:
    """Matern through the modified Bessel function for any kappa"""
    u = np.abs(np.asarray(delta, dtype=float)) / phi
    with np.errstate(invalid="ignore", over="ignore"):
        # kve(k, u) = K_k(u) e^u keeps large u finite
        values = u ** kappa * special.kve(kappa, u) * np.exp(-u)
        values = values / (2.0 ** (kappa - 1.0) * special.gamma(kappa))
    return np.where(u == 0, 1.0, np.nan_to_num(values, nan=0.0))


def sim3_rho(delta) -> np.ndarray:
    a = np.abs(np.asarray(delta, dtype=float))
    return 0.5 * np.cos(a / 60.0) / (1.0 + a / 100.0) + 0.5 * np.exp(-a / 800.0)


def correlation_values(spec: CorrelationFunctionSpec, delta) -> np.ndarray:
    if isinstance(spec, MaternCorrelation):
        return matern(delta, spec.phi, spec.kappa)
    if isinstance(spec, Sim3Correlation):
        return sim3_rho(delta)
    a = np.abs(np.asarray(delta, dtype=float))
    grid = np.asarray(spec.grid)
    curve = interpolate.PchipInterpolator(grid, np.asarray(spec.values), extrapolate=False)
    return np.where(a <= grid[-1], np.nan_to_num(curve(np.minimum(a, grid[-1]))), 0.0)


def matern_second_derivative(delta, phi: float, kappa: float) -> np.ndarray:
    """
    rho'' of a Matern correlation with kappa > 1:
    c {u^k K_(k-2)(u) - u^(k-1) K_(k-1)(u)} / phi^2 with u = |d| / phi,
    and -1 / (2 phi^2 (k - 1)) at d = 0.
    """
    u = np.abs(np.atleast_1d(np.asarray(delta, dtype=float))) / phi
    c = 1.0 / (2.0 ** (kappa - 1.0) * special.gamma(kappa))
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        scaled = u ** kappa * special.kve(kappa - 2.0, u) - u ** (kappa - 1.0) * special.kve(kappa - 1.0, u)
        values = c * scaled * np.exp(-u) / (phi * phi)
    at_zero = -1.0 / (2.0 * phi * phi * (kappa - 1.0))
    return np.where(u == 0, at_zero, np.nan_to_num(values, nan=0.0))


def second_derivative(spec: CorrelationFunctionSpec, delta) -> np.ndarray:
    """rho''; elementary closed forms for Matern kappa 1.5 and 2.5"""
    if not isinstance(spec, MaternCorrelation):
        raise BiasUndefined(f"{spec.kind} correlation is not twice differentiable at 0")
    if spec.kappa <= 1.0:
        raise BiasUndefined(f"Matern with kappa={spec.kappa:g} is not twice differentiable at 0")
    u = np.abs(np.atleast_1d(np.asarray(delta, dtype=float))) / spec.phi
    phi2 = spec.phi * spec.phi
    if spec.kappa == 1.5:
        return (u - 1.0) * np.exp(-u) / phi2
    if spec.kappa == 2.5:
        return -(1.0 + u - u * u) * np.exp(-u) / (3.0 * phi2)
    return matern_second_derivative(delta, spec.phi, spec.kappa)


def asymptotic_bias_rho(spec: CorrelationFunctionSpec, delta, h: float, kernel: KernelSpec) -> np.ndarray:
    """(rho''(d) - rho(d) rho''(0)) sigma_K^2 h^2 / 2; exactly 0 at d = 0"""
    d = np.atleast_1d(np.asarray(delta, dtype=float))
    sigma_k2, _ = kernel_moments(kernel)
    curvature = second_derivative(spec, d)
    at_zero = second_derivative(spec, 0.0)[0]
    bias = (curvature - correlation_values(spec, d) * at_zero) * sigma_k2 * h * h / 2.0
    bias[d == 0] = 0.0
    return bias


class MaternFit(BaseModel):
    phi: float
    kappa: float
    rss: float


def fit_matern(
    delta_grid: Sequence[float],
    rho: Sequence[float],
    bounds: Optional[Tuple[Tuple[float, float], Tuple[float, float]]] = None,
) -> MaternFit:
    """Least-squares Matern approximation over (log phi, log kappa)"""
    d = np.asarray(delta_grid, dtype=float)
    r = np.asarray(rho, dtype=float)
    keep = np.isfinite(r)
    d, r = d[keep], r[keep]
    if d.size < 2:
        raise EstimationError("need at least two finite correlation values to fit a Matern curve")
    span = float(d.max()) if d.max() > 0 else 1.0
    bounds = bounds or ((span / 1e3, span * 10.0), (0.1, 10.0))
    log_bounds = [tuple(np.log(b)) for b in bounds]

    def rss(params):
        phi, kappa = np.exp(params)
        return float(((r - matern(d, phi, kappa)) ** 2).sum())

    # below the range crossing 1/e, rho is roughly exp(-d / phi)
    below = np.flatnonzero(r < np.exp(-1.0))
    phi0 = d[below[0]] if below.size else span / 4.0
    starts = [(np.log(max(phi0, bounds[0][0])), np.log(k)) for k in (0.5, 1.5)]
    best = None
    for x0 in starts:
        x0 = np.clip(x0, [b[0] for b in log_bounds], [b[1] for b in log_bounds])
        result = optimize.minimize(
            rss, x0, method="L-BFGS-B", bounds=log_bounds, options={"ftol": 1e-14, "gtol": 1e-10}
        )
        if best is None or result.fun < best.fun:
            best = result
    phi, kappa = np.exp(best.x)
    logger.info(f"Matern fit: phi={phi:.4g}, kappa={kappa:.4g}, rss={best.fun:.4g}")
    return MaternFit(phi=float(phi), kappa=float(kappa), rss=float(best.fun))


def spectral_density(spec: CorrelationFunctionSpec, grid: TransformGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Cosine transform of a correlation model truncated at grid.delta_max"""
    lags = grid.delta_points
    return cosine_transform(lags, correlation_values(spec, lags), NoTaper(), grid)
