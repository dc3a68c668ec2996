"""
Kernel covariance and correlation estimators for subject/unit/subunit data.

Point evaluations sum over pairs with numpy's pairwise reduction and across
subjects with a correctly rounded sum, so the symmetry identities hold
bitwise. Grid rendering batches all lags through one matrix product per
subject and is used where many lags are needed at once.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import DegenerateG, EstimationError, NoSupportAtLag
from app.core.kernels import scaled_weights
from app.core.pairs import (
    SubjectPairs,
    build_pair_index,
    center_residuals,
    exact_stack_sum,
    exact_sum,
)
from app.models.dataset import Dataset, ResidualSet
from app.models.estimate import CorrelationCurve, CovarianceSurface
from app.models.kernel import KernelSpec

logger = logging.getLogger(__name__)

# Grid points per batched weight matrix
_GRID_CHUNK = 32


def lower_sum(matrix: np.ndarray) -> float:
    """Sum over x2 <= x1, diagonal included, each unordered pair once"""
    rows, cols = np.tril_indices(matrix.shape[0])
    return exact_sum(matrix[rows, cols])


def lower_sums(stack: np.ndarray) -> np.ndarray:
    """lower_sum for every matrix of a (G, m, m) stack"""
    rows, cols = np.tril_indices(stack.shape[1])
    return stack[:, rows, cols].sum(axis=1)


def weighted_pair_sums(
    pairs: SubjectPairs, family, deltas: np.ndarray, h: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    One subject's symmetrized numerator (G, m, m) and kernel weight (G,) at
    each of ``deltas`` (non-negative) with per-lag bandwidths ``h``.
    Both ordered pairs of every unordered pair are counted.
    """
    m = pairs.products.shape[0]
    num = np.zeros((deltas.size, m * m))
    den = np.zeros(deltas.size)
    if pairs.count == 0 or deltas.size == 0:
        return num.reshape(deltas.size, m, m), den
    abs_lags = pairs.abs_lags
    flat = pairs.flat_products()
    for start in range(0, deltas.size, _GRID_CHUNK):
        chunk = slice(start, start + _GRID_CHUNK)
        lo = np.searchsorted(abs_lags, (deltas[chunk] - h[chunk]).min(), side="right")
        hi = np.searchsorted(abs_lags, (deltas[chunk] + h[chunk]).max(), side="left")
        if hi <= lo:
            continue
        weights = scaled_weights(family, abs_lags[None, lo:hi] - deltas[chunk, None], h[chunk, None])
        num[chunk] = weights @ flat[lo:hi]
        den[chunk] = 2.0 * weights.sum(axis=1)
    num = num.reshape(deltas.size, m, m)
    return num + num.transpose(0, 2, 1), den


class CovarianceEstimate:
    """
    Symmetrized (or raw) kernel covariance estimator over a ResidualSet.

    The pair index is built once; ``lag_cap`` bounds the |lag| of stored
    pairs, so queries must satisfy |delta| + h <= lag_cap.
    """

    def __init__(
        self,
        residuals: ResidualSet,
        kernel: KernelSpec,
        lag_cap: Optional[float] = None,
        symmetrized: bool = True,
    ):
        self.residuals = residuals
        self.kernel = kernel
        self.lag_cap = lag_cap
        self.symmetrized = symmetrized
        self.pairs: List[SubjectPairs] = build_pair_index(residuals, lag_cap)
        self.m = residuals.m

    @classmethod
    def from_dataset(
        cls,
        data: Dataset,
        kernel: KernelSpec,
        lag_cap: Optional[float] = None,
        skip_empty: bool = False,
    ) -> "CovarianceEstimate":
        return cls(center_residuals(data, skip_empty=skip_empty), kernel, lag_cap)

    def _check_cap(self, delta: float, h: float) -> None:
        if self.lag_cap is not None and abs(delta) + h > self.lag_cap * (1 + 1e-12):
            raise EstimationError(
                f"lag {delta:g} with bandwidth {h:g} exceeds the pair cap {self.lag_cap:g}"
            )

    # ---- point evaluation -------------------------------------------------

    def _sym_parts(self, delta: float) -> Tuple[np.ndarray, float, float]:
        d = abs(delta)
        h = self.kernel.bandwidth_at(d)
        self._check_cap(d, h)
        nums, dens = [], []
        for pairs in self.pairs:
            window = pairs.window(d, h)
            w = scaled_weights(self.kernel.family, np.abs(pairs.lags[window]) - d, h)
            q = (pairs.products[:, :, window] * w).sum(axis=-1)
            # ordered pairs (i, k) and (k, i) share |lag|
            nums.append(q + q.T)
            dens.append(2.0 * w.sum())
        num = exact_stack_sum(np.array(nums)) if nums else np.zeros((self.m, self.m))
        return num, exact_sum(dens), h

    def _raw_parts(self, delta: float) -> Tuple[np.ndarray, float, float]:
        h = self.kernel.bandwidth_at(delta)
        self._check_cap(delta, h)
        nums, dens = [], []
        for pairs in self.pairs:
            window = pairs.window(abs(delta), h)
            lags = pairs.lags[window]
            products = pairs.products[:, :, window]
            forward = scaled_weights(self.kernel.family, lags - delta, h)
            backward = scaled_weights(self.kernel.family, -lags - delta, h)
            q_forward = (products * forward).sum(axis=-1)
            q_backward = (products * backward).sum(axis=-1)
            nums.append(q_forward + q_backward.T)
            dens.append(forward.sum() + backward.sum())
        num = exact_stack_sum(np.array(nums)) if nums else np.zeros((self.m, self.m))
        return num, exact_sum(dens), h

    def sym_matrix(self, delta: float) -> np.ndarray:
        """V-tilde(., ., delta) as an m x m matrix"""
        num, den, h = self._sym_parts(delta)
        if den == 0:
            raise NoSupportAtLag(delta, h)
        return num / den

    def raw_matrix(self, delta: float) -> np.ndarray:
        """V-hat(., ., delta) as an m x m matrix"""
        num, den, h = self._raw_parts(delta)
        if den == 0:
            raise NoSupportAtLag(delta, h)
        return num / den

    def matrix(self, delta: float) -> np.ndarray:
        return self.sym_matrix(delta) if self.symmetrized else self.raw_matrix(delta)

    def sym(self, x1: int, x2: int, delta: float) -> float:
        return float(self.sym_matrix(delta)[x1, x2])

    def raw(self, x1: int, x2: int, delta: float) -> float:
        return float(self.raw_matrix(delta)[x1, x2])

    def g_hat(self) -> np.ndarray:
        return self.sym_matrix(0.0)

    def rho_hat(self, delta: float) -> float:
        denominator = self._g_denominator(self.g_hat())
        return lower_sum(self.sym_matrix(delta)) / denominator

    def _g_denominator(self, g_hat: np.ndarray) -> float:
        denominator = lower_sum(g_hat)
        rows, cols = np.tril_indices(self.m)
        scale = exact_sum(np.abs(g_hat[rows, cols]))
        if denominator == 0 or abs(denominator) < settings.DEGENERATE_G_TOLERANCE * scale:
            raise DegenerateG(
                f"sum of G-hat over x2 <= x1 is {denominator:g}; correlation undefined"
            )
        return denominator

    # ---- grid rendering ---------------------------------------------------

    def _batched(self, deltas: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(numerators (G, m, m), denominators (G,)) of V-tilde at |deltas|"""
        deltas = np.abs(np.asarray(deltas, dtype=float))
        h = self.kernel.bandwidths_at(deltas)
        for d, hh in zip(deltas, h):
            self._check_cap(d, hh)
        num = np.zeros((deltas.size, self.m, self.m))
        den = np.zeros(deltas.size)
        for pairs in self.pairs:
            subject_num, subject_den = weighted_pair_sums(pairs, self.kernel.family, deltas, h)
            num += subject_num
            den += subject_den
        return num, den

    def render(self, delta_grid: Sequence[float]) -> CovarianceSurface:
        """V-tilde on a grid; unsupported grid points are NaN instead of errors"""
        grid = np.asarray(delta_grid, dtype=float)
        if grid.size == 0:
            raise EstimationError("delta grid must not be empty")
        num, den = self._batched(grid)
        values = np.full_like(num, np.nan)
        supported = den > 0
        values[supported] = num[supported] / den[supported, None, None]
        weight = pair_weight_grid(self.residuals.dataset, self.kernel, grid)
        if not supported.all():
            logger.info(f"{int((~supported).sum())} of {grid.size} grid lags have no pair support")
        return CovarianceSurface(delta_grid=grid, values=values, effective_weight=weight)

    def correlation_curve(self, delta_grid: Sequence[float]) -> CorrelationCurve:
        """rho-hat on a grid; G-hat shares the computation of the zero lag"""
        grid = np.asarray(delta_grid, dtype=float)
        surface = self.render(grid)
        zero = np.flatnonzero(grid == 0)
        if zero.size:
            g_hat = surface.values[zero[0]]
            if not np.all(np.isfinite(g_hat)):
                raise NoSupportAtLag(0.0, self.kernel.bandwidth_at(0.0))
        else:
            g_hat = self.g_hat()
        denominator = self._g_denominator(g_hat)
        rho = lower_sums(surface.values) / denominator
        if zero.size:
            rho[zero] = lower_sum(g_hat) / denominator
        return CorrelationCurve(delta_grid=grid, rho=rho, g_hat=g_hat)


def _subject_lags(locations: np.ndarray, cap: Optional[float]) -> np.ndarray:
    first, second = np.triu_indices(locations.size, k=1)
    lags = locations[first] - locations[second]
    if cap is not None:
        lags = lags[np.abs(lags) <= cap]
    return lags


def pair_weight_grid(data: Dataset, kernel: KernelSpec, delta_grid: Sequence[float]) -> np.ndarray:
    """
    A(delta) = sum_r sum_i sum_{k != i} K_h(Delta_r(i, k) - delta) on a grid.
    Raw kernel weight, not length normalised.
    """
    grid = np.asarray(delta_grid, dtype=float)
    h = kernel.bandwidths_at(grid)
    cap = float(np.max(np.abs(grid) + h))
    per_subject = []
    for subject in data.subjects:
        lags = _subject_lags(subject.unit_locations, cap)
        forward = scaled_weights(kernel.family, lags[None, :] - grid[:, None], h[:, None])
        backward = scaled_weights(kernel.family, -lags[None, :] - grid[:, None], h[:, None])
        per_subject.append(forward.sum(axis=1) + backward.sum(axis=1))
    if not per_subject:
        return np.zeros(grid.size)
    return exact_stack_sum(np.array(per_subject))


# ---- operation-level functions ------------------------------------------


def raw_covariance(residuals: ResidualSet, kernel: KernelSpec, x1: int, x2: int, delta: float) -> float:
    return CovarianceEstimate(residuals, kernel, symmetrized=False).raw(x1, x2, delta)


def sym_covariance(residuals: ResidualSet, kernel: KernelSpec, x1: int, x2: int, delta: float) -> float:
    return CovarianceEstimate(residuals, kernel).sym(x1, x2, delta)


def g_hat(residuals: ResidualSet, kernel: KernelSpec) -> np.ndarray:
    return CovarianceEstimate(residuals, kernel).g_hat()


def rho_hat(residuals: ResidualSet, kernel: KernelSpec, delta: float) -> float:
    return CovarianceEstimate(residuals, kernel).rho_hat(delta)


def pair_weight_A(data: Dataset, kernel: KernelSpec, delta: float) -> float:
    return float(pair_weight_grid(data, kernel, [delta])[0])


def render_surface(residuals: ResidualSet, kernel: KernelSpec, delta_grid: Sequence[float]) -> CovarianceSurface:
    grid = np.asarray(delta_grid, dtype=float)
    cap = float(np.max(np.abs(grid)) + kernel.max_bandwidth)
    return CovarianceEstimate(residuals, kernel, lag_cap=cap).render(grid)


def default_delta_grid(delta_max: float, points: Optional[int] = None) -> np.ndarray:
    return np.linspace(0.0, delta_max, points or settings.DELTA_GRID_POINTS)


class EstimatorService:
    """Builds estimates and correlation curves for datasets"""

    def estimate_curve(
        self,
        data: Dataset,
        kernel: KernelSpec,
        delta_grid: Sequence[float],
        skip_empty: bool = False,
    ) -> CorrelationCurve:
        grid = np.asarray(delta_grid, dtype=float)
        cap = float(np.max(np.abs(grid)) + kernel.max_bandwidth)
        estimate = CovarianceEstimate.from_dataset(data, kernel, lag_cap=cap, skip_empty=skip_empty)
        return estimate.correlation_curve(grid)

    def estimate_surface(self, data: Dataset, kernel: KernelSpec, delta_grid: Sequence[float]) -> CovarianceSurface:
        return render_surface(center_residuals(data), kernel, delta_grid)


# Global service instance
estimator_service = EstimatorService()


def get_estimator_service() -> EstimatorService:
    """Dependency for FastAPI to get the estimator service"""
    return estimator_service
