"""
Shared fixtures: small hand-built datasets and a simulated Matern dataset
"""

from typing import Optional, Sequence

import numpy as np
import pytest

from app.models.dataset import Dataset, Subject
from app.models.kernel import KernelSpec
from app.models.simulation import MaternCorrelation, PoissonProcess, RandomFieldModel
from app.services.sampling import simulate_dataset


def make_dataset(
    locations: Sequence[Sequence[float]],
    m: int = 2,
    seed: int = 0,
    domain_length: Optional[float] = None,
    responses: Optional[Sequence[np.ndarray]] = None,
) -> Dataset:
    """Subjects s1, s2, ... at the given locations with Gaussian responses"""
    rng = np.random.default_rng(seed)
    subjects = []
    for r, locs in enumerate(locations):
        locs = np.asarray(locs, dtype=float)
        values = responses[r] if responses is not None else rng.standard_normal((locs.size, m))
        subjects.append(Subject(id=f"s{r + 1}", unit_locations=locs, responses=values))
    grid = np.linspace(0.0, 1.0, m) if m > 1 else np.array([0.5])
    length = domain_length or max(float(np.max(l)) for l in locations if len(l))
    return Dataset(subjects=subjects, subunit_grid=grid, domain_length=length)


@pytest.fixture
def small_dataset() -> Dataset:
    rng = np.random.default_rng(11)
    locations = [np.sort(rng.uniform(0.0, 100.0, size=n)) for n in (9, 7, 8)]
    return make_dataset(locations, m=2, seed=3, domain_length=100.0)


@pytest.fixture
def matern_model() -> RandomFieldModel:
    grid = np.linspace(0.0, 1.0, 3)
    G = np.exp(-np.abs(grid[:, None] - grid[None, :]))
    return RandomFieldModel(
        G=G.tolist(),
        rho=MaternCorrelation(phi=50.0, kappa=1.5),
        sigma_eps=0.3,
        process=PoissonProcess.with_expected_count(80.0, 2000.0),
    )


@pytest.fixture
def simulated_dataset(matern_model) -> Dataset:
    return simulate_dataset(matern_model, 4, np.linspace(0.0, 1.0, 3), np.random.default_rng(7))


@pytest.fixture
def kernel() -> KernelSpec:
    return KernelSpec.global_h(40.0)
