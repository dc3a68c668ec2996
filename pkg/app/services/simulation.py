"""
Simulation experiments: pooled moment estimates, IMSE, scenario presets and
the replicate harness
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import integrate

from app.core.config import settings
from app.core.errors import EstimationError, GridCoverageError, ReplicateFailure, ShapeMismatch
from app.core.pairs import center_residuals
from app.core.random_streams import replicate_rng
from app.models.bootstrap import BootstrapConfig
from app.models.kernel import KernelSpec
from app.models.psd import LinearTaper
from app.models.simulation import (
    CorrelationFunctionSpec,
    ExperimentReport,
    MaternCorrelation,
    PoissonProcess,
    RandomFieldModel,
    ReplicateOutcome,
    ScenarioConfig,
    Sim3Correlation,
    TruncatedNormalDensity,
)
from app.models.dataset import Dataset
from app.services.bootstrap import bootstrap_sd, default_block_length
from app.services.correlation_models import correlation_values
from app.services.estimator import CovarianceEstimate, estimator_service
from app.services.psd import psd_adjust
from app.services.sampling import simulate_dataset

logger = logging.getLogger(__name__)


def empirical_G(data: Dataset) -> np.ndarray:
    """(sum_r N_r)^-1 sum_r sum_i e_ri e_ri^T over centered responses"""
    if data.total_units == 0:
        raise EstimationError("empirical G needs at least one unit")
    residuals = center_residuals(data, skip_empty=True).residuals
    stacked = np.concatenate([e for e in residuals if e.size], axis=0)
    g = stacked.T @ stacked / data.total_units
    return (g + g.T) / 2.0


class NoiseEstimate(BaseModel):
    value: float
    negative: bool

    @property
    def sd(self) -> float:
        """Sampling sd; negative variance estimates floor at 0"""
        return float(np.sqrt(max(self.value, 0.0)))


def noise_variance_estimate(g_star, g_hat) -> NoiseEstimate:
    """Mean of diag(G* - G-hat)"""
    g_star = np.asarray(g_star, dtype=float)
    g_hat = np.asarray(g_hat, dtype=float)
    if g_star.shape != g_hat.shape or g_star.ndim != 2:
        raise ShapeMismatch(f"G* {g_star.shape} and G-hat {g_hat.shape} differ")
    value = float(np.mean(np.diag(g_star) - np.diag(g_hat)))
    if value < 0:
        logger.warning(f"noise variance estimate is negative ({value:.4g})")
    return NoiseEstimate(value=value, negative=value < 0)


def imse(
    delta_grid: Sequence[float],
    estimate: Sequence[float],
    truth: CorrelationFunctionSpec,
    delta_range: Tuple[float, float],
) -> float:
    """Trapezoid integral of (estimate - truth)^2 over the range"""
    d = np.asarray(delta_grid, dtype=float)
    values = np.asarray(estimate, dtype=float)
    lo, hi = delta_range
    if d.size < 2 or d[0] > lo or d[-1] < hi or lo >= hi:
        raise GridCoverageError(
            f"estimate grid [{d[0] if d.size else float('nan'):g}, "
            f"{d[-1] if d.size else float('nan'):g}] does not cover [{lo:g}, {hi:g}]"
        )
    inside = (d > lo) & (d < hi)
    x = np.concatenate([[lo], d[inside], [hi]])
    y = np.concatenate([np.interp([lo], d, values), values[inside], np.interp([hi], d, values)])
    if not np.all(np.isfinite(y)):
        raise EstimationError(f"estimate has missing values inside [{lo:g}, {hi:g}]")
    return float(integrate.trapezoid((y - correlation_values(truth, x)) ** 2, x))


# ---- scenario presets --------------------------------------------------------


def sim1_style(replications: int = 200, seed: int = 0, bootstrap_replicates: int = 200) -> ScenarioConfig:
    """Twelve subjects, eleven subunits, Matern(phi=120, kappa=1.5) units"""
    grid = np.linspace(0.0, 1.0, 11)
    G = np.exp(-np.abs(grid[:, None] - grid[None, :]))  # trace 11
    length = 24000.0
    return ScenarioConfig(
        name="sim1_style",
        model=RandomFieldModel(
            G=G.tolist(),
            rho=MaternCorrelation(phi=120.0, kappa=1.5),
            sigma_eps=0.5,
            process=PoissonProcess.with_expected_count(200.0, length),
        ),
        n_subjects=12,
        subunit_grid=grid.tolist(),
        kernel=KernelSpec.global_h(120.0),
        delta_max=600.0,
        delta_points=101,
        block_length=length / 2.4,
        bootstrap_replicates=bootstrap_replicates,
        imse_ranges=[(0.0, 500.0)],
        replications=replications,
        seed=seed,
    )


def sim3(replications: int = 200, seed: int = 0) -> ScenarioConfig:
    """One long subject with a damped-cosine correlation"""
    return ScenarioConfig(
        name="sim3",
        model=RandomFieldModel(
            G=[[1.0]],
            rho=Sim3Correlation(),
            sigma_eps=0.3,
            process=PoissonProcess.with_expected_count(
                500.0, 50000.0, TruncatedNormalDensity(mu=0.5, sigma=0.2)
            ),
        ),
        n_subjects=1,
        kernel=KernelSpec.global_h(35.0),
        delta_max=1000.0,
        delta_points=101,
        block_length=6000.0,
        taper=LinearTaper(d1=600.0, d2=1000.0),
        imse_ranges=[(0.0, 50.0), (0.0, 500.0)],
        replications=replications,
        seed=seed,
    )


SCENARIOS = {"sim1_style": sim1_style, "sim3": sim3}


def calibrated_scenarios(
    data: Dataset,
    bandwidths: Optional[Sequence[float]] = None,
    rho: Optional[CorrelationFunctionSpec] = None,
    replications: int = 200,
    seed: int = 0,
    bootstrap_replicates: Optional[int] = None,
    delta_max: Optional[float] = None,
    block_length: Optional[float] = None,
) -> List[ScenarioConfig]:
    """
    Experiments that mimic a real dataset: the observed unit locations, G = G* from
    the pooled centered responses, and noise variance mean diag(G* - G-hat) with
    G-hat at the first bandwidth. One scenario per bandwidth; all share model and
    seed, so every bandwidth sees the same simulated datasets.
    """
    bandwidths = list(bandwidths or settings.CALIBRATED_BANDWIDTHS)
    if not bandwidths:
        raise EstimationError("calibrated simulation needs at least one bandwidth")
    rho = rho or MaternCorrelation(phi=settings.CALIBRATED_PHI, kappa=settings.CALIBRATED_KAPPA)
    subjects = [s for s in data.subjects if s.n_units > 0]
    if len(subjects) < len(data.subjects):
        logger.warning(f"dropping {len(data.subjects) - len(subjects)} subject(s) without units")
    g_star = empirical_G(data)
    g_hat = CovarianceEstimate.from_dataset(data, KernelSpec.global_h(bandwidths[0]), skip_empty=True).g_hat()
    noise = noise_variance_estimate(g_star, g_hat)
    logger.info(f"calibrated noise variance {noise.value:.4g} from G-hat at h={bandwidths[0]:g}")

    length = data.domain_length
    model = RandomFieldModel(
        G=g_star.tolist(),
        rho=rho,
        sigma_eps=noise.sd,
        process=PoissonProcess.with_expected_count(data.total_units / len(subjects), length),
    )
    delta_max = delta_max or settings.CALIBRATED_DELTA_MAX
    if block_length is None and settings.CALIBRATED_BLOCK_LENGTH <= length:
        block_length = settings.CALIBRATED_BLOCK_LENGTH
    elif block_length is None:
        block_length = default_block_length(data)
        logger.warning(f"domain shorter than L*={settings.CALIBRATED_BLOCK_LENGTH:g}; using {block_length:g}")
    return [
        ScenarioConfig(
            name=f"calibrated_h{h:g}",
            model=model,
            n_subjects=len(subjects),
            subunit_grid=data.subunit_grid.tolist(),
            kernel=KernelSpec.global_h(h),
            delta_max=delta_max,
            block_length=block_length,
            bootstrap_replicates=settings.BOOTSTRAP_REPLICATES if bootstrap_replicates is None else bootstrap_replicates,
            imse_ranges=[(0.0, min(500.0, delta_max))],
            replications=replications,
            seed=seed,
            fixed_locations=[(s.unit_locations - s.origin).tolist() for s in subjects],
        )
        for h in bandwidths
    ]


# ---- replicate harness -------------------------------------------------------


def run_replicate(scenario: ScenarioConfig, index: int) -> ReplicateOutcome:
    """Sample, estimate, bootstrap and adjust; depends only on (seed, index)"""
    grid = scenario.delta_grid
    try:
        data = simulate_dataset(
            scenario.model,
            scenario.n_subjects,
            scenario.grid,
            replicate_rng(scenario.seed, index, 0),
            scenario.fixed_locations,
        )
        curve = estimator_service.estimate_curve(data, scenario.kernel, grid)
        sd = None
        if scenario.bootstrap_replicates:
            config = BootstrapConfig(
                block_length=scenario.block_length or default_block_length(data),
                replicates=scenario.bootstrap_replicates,
                seed=int(replicate_rng(scenario.seed, index, 1).integers(2 ** 63)),
                delta_grid=grid.tolist(),
            )
            sd = bootstrap_sd(data, scenario.kernel, config, workers=1).sd
        adjusted = psd_adjust(grid, curve.rho, scenario.taper).adjusted
        truth = scenario.model.rho
        return ReplicateOutcome(
            index=index,
            rho=curve.rho,
            adjusted=adjusted,
            bootstrap_sd=sd,
            imse_rho=[imse(grid, curve.rho, truth, r) for r in scenario.imse_ranges],
            imse_adjusted=[imse(grid, adjusted, truth, r) for r in scenario.imse_ranges],
        )
    except EstimationError as e:
        logger.error(f"Replicate {index} of {scenario.name} failed: {e}")
        raise ReplicateFailure(index, e) from e


def _replicate_task(payload) -> ReplicateOutcome:
    return run_replicate(*payload)


def aggregate(scenario: ScenarioConfig, outcomes: List[ReplicateOutcome]) -> ExperimentReport:
    grid = scenario.delta_grid
    rhos = np.array([o.rho for o in outcomes])
    adjusted = np.array([o.adjusted for o in outcomes])
    p05, p95 = np.percentile(rhos, [5.0, 95.0], axis=0)
    empirical_sd = rhos.std(axis=0, ddof=1) if len(outcomes) > 1 else np.zeros(grid.size)
    mean_sd = None
    if scenario.bootstrap_replicates:
        mean_sd = np.nanmean(np.array([o.bootstrap_sd for o in outcomes]), axis=0)
    imse_rho = np.array([o.imse_rho for o in outcomes]).reshape(len(outcomes), -1)
    imse_adjusted = np.array([o.imse_adjusted for o in outcomes]).reshape(len(outcomes), -1)
    return ExperimentReport(
        scenario=scenario.name,
        delta_grid=grid,
        truth=correlation_values(scenario.model.rho, grid),
        mean=rhos.mean(axis=0),
        p05=p05,
        p95=p95,
        empirical_sd=empirical_sd,
        mean_adjusted=adjusted.mean(axis=0),
        mean_bootstrap_sd=mean_sd,
        imse_ranges=scenario.imse_ranges,
        imse_rho=imse_rho.mean(axis=0).tolist(),
        imse_adjusted=imse_adjusted.mean(axis=0).tolist(),
        adjusted_better=(imse_adjusted < imse_rho).mean(axis=0).tolist(),
        replications=len(outcomes),
    )


def run_experiment(scenario: ScenarioConfig, workers: Optional[int] = None) -> ExperimentReport:
    workers = workers or settings.WORKERS
    indices = range(scenario.replications)
    logger.info(f"running {scenario.name}: {scenario.replications} replications, {workers} worker(s)")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_replicate_task, [(scenario, b) for b in indices]))
    else:
        outcomes = [run_replicate(scenario, b) for b in indices]
    return aggregate(scenario, outcomes)


class SimulationService:
    """Scenario lookup and experiment runs"""

    def scenario(self, name: str, replications: Optional[int] = None, seed: int = 0) -> ScenarioConfig:
        if name not in SCENARIOS:
            raise EstimationError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
        scenario = SCENARIOS[name](seed=seed)
        if replications is not None:
            scenario = scenario.model_copy(update={"replications": replications})
        return scenario

    def calibrated(
        self,
        data: Dataset,
        bandwidths: Optional[Sequence[float]] = None,
        replications: Optional[int] = None,
        seed: int = 0,
        **options,
    ) -> List[ScenarioConfig]:
        """Data-calibrated scenarios; options pass through to calibrated_scenarios"""
        return calibrated_scenarios(
            data,
            bandwidths,
            replications=replications or settings.CALIBRATED_REPLICATIONS,
            seed=seed,
            **options,
        )

    def run(self, scenario: ScenarioConfig, workers: Optional[int] = None) -> ExperimentReport:
        return run_experiment(scenario, workers)


# Global service instance
simulation_service = SimulationService()


def get_simulation_service() -> SimulationService:
    """Dependency for FastAPI to get the simulation service"""
    return simulation_service
