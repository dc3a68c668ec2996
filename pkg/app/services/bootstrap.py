"""
Intensity-weighted block bootstrap for the standard deviation of rho-hat
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigError, EstimationError
from app.core.random_streams import replicate_rng
from app.models.bootstrap import BootstrapConfig, BootstrapReport, ReplicateDiagnostics
from app.models.dataset import Dataset, Subject
from app.models.kernel import KernelSpec
from app.services.estimator import estimator_service, pair_weight_grid

logger = logging.getLogger(__name__)


def default_block_length(data: Dataset) -> float:
    """Two nonoverlapping blocks per subject and enough blocks to pool 24"""
    length = data.domain_length
    return min(length / 2.0, data.n_subjects * length / settings.BOOTSTRAP_TARGET_BLOCKS)


def resample_once(data: Dataset, config: BootstrapConfig, rng: np.random.Generator) -> Dataset:
    """
    Draw R subjects with replacement and cut one block of length L* from each.

    Units keep their absolute locations; each block subject records its start
    as ``origin`` and the result's domain length is L*.
    """
    length = data.domain_length
    block = config.block_length
    if block > length:
        raise ConfigError(f"block length {block:g} exceeds the domain length {length:g}")
    n = data.n_subjects
    draws = rng.permutation(n) if config.distinct_subjects else rng.integers(0, n, size=n)
    subjects = []
    for k, r in enumerate(draws):
        source = data.subjects[int(r)]
        start = source.origin + float(rng.uniform(0.0, length - block))
        end = start + block
        locations = source.unit_locations
        keep = (locations >= start) & (locations <= end)
        responses = data.responses_of(int(r))[keep]
        subjects.append(Subject(
            id=f"{source.id}#b{k}",
            unit_locations=locations[keep],
            responses=responses if responses.size else np.zeros((0, data.m)),
            origin=start,
        ))
    return Dataset(subjects=subjects, subunit_grid=data.subunit_grid, domain_length=block)


def run_replicate(data: Dataset, kernel: KernelSpec, config: BootstrapConfig, index: int) -> ReplicateDiagnostics:
    """rho-hat*_b and A*_b for replicate ``index``; depends only on (seed, index)"""
    grid = np.asarray(config.delta_grid, dtype=float)
    boot = resample_once(data, config, replicate_rng(config.seed, index))
    weight = pair_weight_grid(boot, kernel, grid)
    failure = None
    try:
        rho = estimator_service.estimate_curve(boot, kernel, grid, skip_empty=True).rho
    except EstimationError as e:
        rho = np.full(grid.size, np.nan)
        failure = f"{e.code}: {e.message}"
    return ReplicateDiagnostics(
        index=index,
        subject_ids=[s.id for s in boot.subjects],
        block_starts=[s.origin for s in boot.subjects],
        weight=weight,
        rho=rho,
        failure=failure,
    )


def _replicate_task(payload) -> ReplicateDiagnostics:
    return run_replicate(*payload)


def weighted_sd(full_weight: np.ndarray, weights: np.ndarray, rhos: np.ndarray):
    """
    sd(delta) = [A^-1 B_u^-1 sum_b A*_b (rho*_b - rho_bar*)^2]^(1/2) per grid
    column over the replicates where rho*_b is defined. Returns (sd, usable).
    """
    usable_mask = np.isfinite(rhos)
    usable = usable_mask.sum(axis=0)
    sd = np.full(rhos.shape[1], np.nan)
    for g in range(rhos.shape[1]):
        if usable[g] < 2 or full_weight[g] <= 0:
            continue
        rho = rhos[usable_mask[:, g], g]
        weight = weights[usable_mask[:, g], g]
        spread = weight * (rho - rho.mean()) ** 2
        sd[g] = np.sqrt(spread.sum() / (full_weight[g] * usable[g]))
    return sd, usable


def bootstrap_sd(
    data: Dataset,
    kernel: KernelSpec,
    config: BootstrapConfig,
    workers: Optional[int] = None,
) -> BootstrapReport:
    grid = np.asarray(config.delta_grid, dtype=float)
    if config.block_length > data.domain_length:
        raise ConfigError(
            f"block length {config.block_length:g} exceeds the domain length {data.domain_length:g}"
        )
    workers = workers or settings.WORKERS
    full_weight = pair_weight_grid(data, kernel, grid)
    if workers > 1:
        payloads = [(data, kernel, config, b) for b in range(config.replicates)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            diagnostics = list(pool.map(_replicate_task, payloads))
    else:
        diagnostics = [run_replicate(data, kernel, config, b) for b in range(config.replicates)]

    failed = [d for d in diagnostics if d.failure]
    if failed:
        logger.warning(f"{len(failed)} of {config.replicates} bootstrap replicates are undefined")
    weights = np.array([d.weight for d in diagnostics])
    rhos = np.array([d.rho for d in diagnostics])
    sd, usable = weighted_sd(full_weight, weights, rhos)
    undefined = int((usable < 2).sum())
    if undefined:
        logger.warning(f"bootstrap sd undefined at {undefined} of {grid.size} lags")
    logger.info(
        f"bootstrap: B={config.replicates}, L*={config.block_length:g}, "
        f"min usable replicates {int(usable.min())}"
    )
    return BootstrapReport(
        delta_grid=grid,
        sd=sd,
        usable=usable,
        full_weight=full_weight,
        replicates=diagnostics,
    )


class BootstrapService:
    """Standard errors for correlation curves"""

    def standard_errors(
        self,
        data: Dataset,
        kernel: KernelSpec,
        config: BootstrapConfig,
        workers: Optional[int] = None,
    ) -> BootstrapReport:
        try:
            return bootstrap_sd(data, kernel, config, workers)
        except EstimationError as e:
            logger.error(f"Bootstrap failed: {e}")
            raise

    def config_for(
        self,
        data: Dataset,
        seed: int,
        delta_grid,
        block_length: Optional[float] = None,
        replicates: Optional[int] = None,
    ) -> BootstrapConfig:
        return BootstrapConfig(
            block_length=block_length or default_block_length(data),
            replicates=replicates or settings.BOOTSTRAP_REPLICATES,
            seed=seed,
            delta_grid=[float(d) for d in delta_grid],
        )


# Global service instance
bootstrap_service = BootstrapService()


def get_bootstrap_service() -> BootstrapService:
    """Dependency for FastAPI to get the bootstrap service"""
    return bootstrap_service
