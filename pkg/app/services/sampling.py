"""
Inhomogeneous Poisson unit locations and separable Gaussian field responses
"""

import logging
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, linalg

from app.core.config import settings
from app.core.errors import EstimationError, InvalidCorrelation
from app.models.dataset import Dataset, Subject
from app.models.simulation import (
    IntensityDensity,
    RandomFieldModel,
    TabulatedDensity,
    TruncatedNormalDensity,
    UniformDensity,
)
from app.services.correlation_models import correlation_values

logger = logging.getLogger(__name__)


def density_pdf(g: IntensityDensity, t) -> np.ndarray:
    """g(t) on [0, 1]; zero outside"""
    t = np.asarray(t, dtype=float)
    inside = (t >= 0) & (t <= 1)
    if isinstance(g, UniformDensity):
        values = np.ones_like(t)
    elif isinstance(g, TruncatedNormalDensity):
        values = g.distribution.pdf(t)
    else:
        values = np.interp(t, g.grid, g.values)
    return np.where(inside, values, 0.0)


def _thinned(g: TabulatedDensity, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Rejection sampling against the piecewise-constant envelope max(g) per segment"""
    grid = np.asarray(g.grid)
    values = np.asarray(g.values)
    accepted = []
    for lo, hi, envelope in zip(grid[:-1], grid[1:], np.maximum(values[:-1], values[1:])):
        n_potential = rng.poisson(rate * envelope * (hi - lo))
        t = rng.uniform(lo, hi, size=n_potential)
        u = rng.random(n_potential)
        accepted.append(t[u <= density_pdf(g, t) / envelope])
    return np.concatenate(accepted) if accepted else np.zeros(0)


def sample_locations(nu: float, length: float, g: IntensityDensity, rng: np.random.Generator) -> np.ndarray:
    """N ~ Poisson(nu L) locations with S / L ~ g, sorted"""
    if nu <= 0 or length <= 0:
        raise EstimationError("Poisson rate and domain length must be positive")
    rate = nu * length
    if isinstance(g, TabulatedDensity):
        t = _thinned(g, rate, rng)
    else:
        n = rng.poisson(rate)
        if isinstance(g, UniformDensity):
            t = rng.uniform(0.0, 1.0, size=n)
        else:
            t = g.distribution.rvs(size=n, random_state=rng)
    return np.sort(np.asarray(t, dtype=float) * length)


def jittered_cholesky(matrix: np.ndarray, label: str = "correlation") -> np.ndarray:
    """
    Lower Cholesky factor of matrix + eps I, eps = 1e-10 trace/N growing x10
    up to 1e-6 trace/N.
    """
    n = matrix.shape[0]
    scale = float(np.trace(matrix)) / n if n else 0.0
    jitter = settings.CHOLESKY_JITTER_START
    while jitter <= settings.CHOLESKY_JITTER_MAX * (1 + 1e-9):
        try:
            return linalg.cholesky(matrix + jitter * scale * np.eye(n), lower=True)
        except linalg.LinAlgError:
            logger.debug(f"{label} Cholesky failed with jitter {jitter:g}; retrying")
            jitter *= 10.0
    raise InvalidCorrelation(f"{label} matrix is not positive semidefinite within the jitter budget")


def unit_correlation_matrix(model: RandomFieldModel, locations) -> np.ndarray:
    s = np.asarray(locations, dtype=float)
    return correlation_values(model.rho, s[:, None] - s[None, :])


def sample_field(model: RandomFieldModel, locations: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    """
    Responses (N, m) with Cov(Y_ij, Y_kl) = rho(|s_i - s_k|) G(j, l) plus
    sigma_eps^2 on the diagonal.
    """
    s = np.asarray(locations, dtype=float)
    m = model.m
    if s.size == 0:
        return np.zeros((0, m))
    if np.unique(s).size != s.size:
        raise EstimationError("field locations must be distinct")
    unit_factor = jittered_cholesky(unit_correlation_matrix(model, s), "unit correlation")
    within_factor = jittered_cholesky(model.G_matrix, "G")
    z = rng.standard_normal((s.size, m))
    theta = unit_factor @ z @ within_factor.T
    noise = model.sigma_eps * rng.standard_normal((s.size, m))
    return theta + noise


def simulate_dataset(
    model: RandomFieldModel,
    n_subjects: int,
    subunit_grid: Sequence[float],
    rng: np.random.Generator,
    locations: Optional[Sequence[Sequence[float]]] = None,
) -> Dataset:
    """
    R independent subjects drawn from the field. Unit locations come from the
    point process unless ``locations`` fixes them per subject.
    """
    process = model.process
    subjects = []
    for r in range(n_subjects):
        if locations is None:
            unit_locations = sample_locations(process.nu, process.length, process.density, rng)
        else:
            unit_locations = np.asarray(locations[r], dtype=float)
        responses = sample_field(model, unit_locations, rng)
        subjects.append(Subject(id=f"s{r + 1}", unit_locations=unit_locations, responses=responses))
    return Dataset(subjects=subjects, subunit_grid=subunit_grid, domain_length=process.length)


def f1_at_zero(g: IntensityDensity, points: Optional[Sequence[float]] = None) -> float:
    """Density of t1 - t2 at 0, i.e. the integral of g^2 over [0, 1]"""
    if isinstance(g, UniformDensity):
        return 1.0
    breaks = list(g.grid) if isinstance(g, TabulatedDensity) else points
    value, _ = integrate.quad(
        lambda t: float(density_pdf(g, t)) ** 2,
        0.0,
        1.0,
        points=None if breaks is None else [b for b in breaks if 0 < b < 1],
        epsabs=1e-12,
        epsrel=1e-12,
        limit=max(200, 4 * len(breaks or [])),
    )
    return float(value)
