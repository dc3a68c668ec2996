"""
End-to-end analysis pipelines shared by the CLI and the HTTP API
"""

import logging
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from app.core.config import settings
from app.core.errors import ConfigError
from app.models.bootstrap import BootstrapReport
from app.models.cv import CvConfig, CvReport
from app.models.dataset import Dataset
from app.models.estimate import CorrelationCurve, CovarianceSurface
from app.models.kernel import KernelSpec
from app.models.psd import AdjustedCurve
from app.models.run import RunConfig
from app.services.bootstrap import bootstrap_service
from app.services.correlation_models import MaternFit, fit_matern
from app.services.cross_validation import cross_validation_service
from app.services.estimator import default_delta_grid, estimator_service
from app.services.psd import psd_service

logger = logging.getLogger(__name__)


def lag_histogram(data: Dataset, cap: float = 1000.0, bins: int = 50) -> pd.DataFrame:
    """Counts of |S_i - S_k| over ordered pairs with |lag| < cap"""
    edges = np.linspace(0.0, cap, bins + 1)
    counts = np.zeros(bins, dtype=int)
    for subject in data.subjects:
        s = subject.unit_locations
        first, second = np.triu_indices(s.size, k=1)
        lags = np.abs(s[first] - s[second])
        lags = lags[lags < cap]
        counts += 2 * np.histogram(lags, bins=edges)[0]
    return pd.DataFrame({"bin_lo": edges[:-1], "bin_hi": edges[1:], "count": counts})


class AnalysisReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    cv: CvReport
    kernel: KernelSpec
    curve: CorrelationCurve
    bootstrap: BootstrapReport
    adjusted: AdjustedCurve
    histogram: pd.DataFrame
    matern: Optional[MaternFit] = None

    def summary(self) -> dict:
        return {
            "criterion": self.cv.criterion.value,
            "kernel": self.kernel.describe(),
            "min_cv_score": self.cv.min_score,
            "g_hat": self.curve.g_hat.tolist(),
            "spectral_negative_mass": self.adjusted.negative_mass,
            "matern_fit": None if self.matern is None else self.matern.model_dump(),
            "bootstrap_replicates": len(self.bootstrap.replicates),
        }


class AnalysisService:
    """Pipelines keyed by RunConfig"""

    def delta_grid(self, config: RunConfig) -> np.ndarray:
        if config.delta_max is None:
            raise ConfigError("a maximum lag (delta_max) is required")
        return default_delta_grid(config.delta_max, config.delta_points)

    def kernel(self, config: RunConfig) -> KernelSpec:
        kernel = config.kernel()
        if kernel is None:
            raise ConfigError("a bandwidth (or bandwidth_near, bandwidth_far and split) is required")
        return kernel

    def cv_config(self, config: RunConfig) -> CvConfig:
        return CvConfig(
            delta_cap=config.delta0 or settings.CV_DELTA0,
            candidate_bandwidths=config.candidates,
            candidates_near=config.candidates_near,
            candidates_far=config.candidates_far,
            split_delta=config.split,
            criterion=config.criterion,
        )

    def require_seed(self, config: RunConfig) -> int:
        if config.seed is None:
            raise ConfigError("this command is stochastic; an explicit seed is required")
        return config.seed

    def estimate(self, data: Dataset, config: RunConfig, surface: bool = False):
        kernel = self.kernel(config)
        grid = self.delta_grid(config)
        curve = estimator_service.estimate_curve(data, kernel, grid)
        rendered: Optional[CovarianceSurface] = None
        if surface:
            rendered = estimator_service.estimate_surface(data, kernel, grid)
        return curve, rendered

    def cross_validate(self, data: Dataset, config: RunConfig) -> CvReport:
        return cross_validation_service.select(
            data, config.kernel_family, self.cv_config(config), workers=config.workers
        )

    def bootstrap(self, data: Dataset, config: RunConfig, kernel: Optional[KernelSpec] = None):
        seed = self.require_seed(config)
        kernel = kernel or self.kernel(config)
        grid = self.delta_grid(config)
        curve = estimator_service.estimate_curve(data, kernel, grid)
        boot_config = bootstrap_service.config_for(
            data, seed, grid, block_length=config.block_length, replicates=config.replicates
        )
        report = bootstrap_service.standard_errors(data, kernel, boot_config, workers=config.workers)
        return curve.model_copy(update={"sd": report.sd}), report

    def adjust(self, delta_grid: Sequence[float], rho: Sequence[float], config: RunConfig) -> AdjustedCurve:
        curve = CorrelationCurve(
            delta_grid=np.asarray(delta_grid, dtype=float),
            rho=np.asarray(rho, dtype=float),
            g_hat=np.ones((1, 1)),
        )
        return psd_service.adjust_curve(curve, config.taper)[1]

    def report(self, data: Dataset, config: RunConfig) -> AnalysisReport:
        """CV-selected bandwidth, rho-hat with bootstrap band, adjusted curve, diagnostics"""
        self.require_seed(config)
        cv = self.cross_validate(data, config)
        kernel = cross_validation_service.selected_kernel(cv, config.kernel_family)
        curve, boot = self.bootstrap(data, config, kernel)
        curve, adjusted = psd_service.adjust_curve(curve, config.taper)
        histogram = lag_histogram(data, cap=max(1000.0, float(curve.delta_grid[-1])))
        try:
            matern = fit_matern(curve.delta_grid, curve.rho)
        except Exception as e:
            logger.warning(f"Matern fit failed: {e}")
            matern = None
        return AnalysisReport(
            cv=cv,
            kernel=kernel,
            curve=curve,
            bootstrap=boot,
            adjusted=adjusted,
            histogram=histogram,
            matern=matern,
        )


# Global service instance
analysis_service = AnalysisService()


def get_analysis_service() -> AnalysisService:
    """Dependency for FastAPI to get the analysis service"""
    return analysis_service
