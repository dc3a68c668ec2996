"""Moment estimates, IMSE and the replicate harness"""

import numpy as np
import pytest
from pydantic import ValidationError

from app.core.errors import EstimationError, GridCoverageError, ShapeMismatch
from app.core.random_streams import replicate_rng
from app.models.kernel import KernelSpec
from app.models.psd import LinearTaper
from app.models.simulation import (
    MaternCorrelation,
    PoissonProcess,
    RandomFieldModel,
    ScenarioConfig,
    Sim3Correlation,
)
from app.services.correlation_models import correlation_values
from app.services.bootstrap import default_block_length
from app.services.estimator import CovarianceEstimate
from app.services.sampling import simulate_dataset
from app.services.simulation import (
    SCENARIOS,
    calibrated_scenarios,
    empirical_G,
    imse,
    noise_variance_estimate,
    run_experiment,
    run_replicate,
    sim1_style,
    sim3,
    simulation_service,
)
from conftest import make_dataset


@pytest.fixture
def scenario() -> ScenarioConfig:
    return ScenarioConfig(
        name="tiny",
        model=RandomFieldModel(
            G=[[1.0, 0.4], [0.4, 1.0]],
            rho=MaternCorrelation(phi=40.0, kappa=2.5),
            sigma_eps=0.2,
            process=PoissonProcess.with_expected_count(60.0, 1000.0),
        ),
        n_subjects=2,
        kernel=KernelSpec.global_h(40.0),
        delta_max=200.0,
        delta_points=21,
        block_length=500.0,
        bootstrap_replicates=2,
        taper=LinearTaper(d1=120.0, d2=200.0),
        imse_ranges=[(0.0, 150.0)],
        replications=2,
        seed=3,
    )


def test_empirical_G_pools_centered_outer_products():
    responses = [np.array([[1.0, 2.0], [3.0, 0.0]]), np.array([[0.0, 1.0], [2.0, 1.0]])]
    data = make_dataset([[0.0, 5.0], [1.0, 4.0]], m=2, responses=responses, domain_length=10.0)
    # residuals: +-(1, -1) for s1 and +-(1, 0) for s2
    expected = (2 * np.array([[1.0, -1.0], [-1.0, 1.0]]) + 2 * np.array([[1.0, 0.0], [0.0, 0.0]])) / 4
    assert np.allclose(empirical_G(data), expected)


def test_noise_variance_estimate():
    estimate = noise_variance_estimate([[1.5, 0.2], [0.2, 2.5]], [[1.0, 0.2], [0.2, 2.0]])
    assert estimate.value == pytest.approx(0.5)
    assert estimate.sd == pytest.approx(np.sqrt(0.5))
    negative = noise_variance_estimate([[1.0]], [[1.2]])
    assert negative.negative and negative.sd == 0.0
    with pytest.raises(ShapeMismatch):
        noise_variance_estimate([[1.0]], [[1.0, 0.0], [0.0, 1.0]])


def test_imse_of_the_truth_is_zero_and_constants_integrate_exactly():
    truth = MaternCorrelation(phi=100.0, kappa=1.5)
    grid = np.linspace(0.0, 500.0, 51)
    assert imse(grid, correlation_values(truth, grid), truth, (0.0, 500.0)) == 0.0
    shifted = correlation_values(truth, grid) + 0.1
    assert imse(grid, shifted, truth, (0.0, 500.0)) == pytest.approx(0.01 * 500.0, rel=1e-9)
    assert imse(grid, shifted, truth, (10.0, 260.0)) == pytest.approx(0.01 * 250.0, rel=1e-9)


def test_imse_needs_grid_coverage():
    grid = np.linspace(0.0, 100.0, 11)
    with pytest.raises(GridCoverageError):
        imse(grid, np.zeros(11), Sim3Correlation(), (0.0, 150.0))
    with pytest.raises(GridCoverageError):
        imse(grid, np.zeros(11), Sim3Correlation(), (50.0, 50.0))


def test_replicates_are_reproducible(scenario):
    a = run_replicate(scenario, 1)
    b = run_replicate(scenario, 1)
    assert np.array_equal(a.rho, b.rho)
    assert np.array_equal(a.bootstrap_sd, b.bootstrap_sd, equal_nan=True)
    assert a.imse_rho == b.imse_rho
    assert a.rho[0] == 1.0


def test_experiment_report(scenario):
    report = run_experiment(scenario, workers=1)
    assert report.replications == 2
    frame = report.to_frame()
    assert list(frame.columns) == [
        "delta", "truth", "mean", "p05", "p95", "empirical_sd", "mean_adjusted", "mean_bootstrap_sd",
    ]
    assert len(frame) == 21
    assert frame["truth"].iloc[0] == 1.0
    summary = report.summary()
    assert summary["imse"][0]["range"] == [0.0, 150.0]
    assert 0.0 <= summary["imse"][0]["adjusted_better_share"] <= 1.0


def test_parallel_experiment_equals_serial(scenario):
    serial = run_experiment(scenario, workers=1)
    parallel = run_experiment(scenario, workers=2)
    assert np.array_equal(serial.mean, parallel.mean)
    assert serial.imse_rho == parallel.imse_rho


def test_presets():
    assert set(SCENARIOS) == {"sim1_style", "sim3"}
    one = sim1_style(replications=3, seed=5)
    assert one.model.m == 11 and one.n_subjects == 12
    assert one.model.process.expected_count == pytest.approx(200.0)
    three = sim3()
    assert three.taper == LinearTaper(d1=600.0, d2=1000.0)
    assert three.imse_ranges == [(0.0, 50.0), (0.0, 500.0)]
    assert simulation_service.scenario("sim3", replications=4, seed=8).replications == 4
    with pytest.raises(EstimationError):
        simulation_service.scenario("nope")


@pytest.mark.slow
def test_sim1_style_replicate_runs():
    scenario = sim1_style(replications=1, seed=1, bootstrap_replicates=0)
    outcome = run_replicate(scenario, 0)
    assert outcome.rho[0] == 1.0
    assert np.all(np.isfinite(outcome.imse_rho))
    assert outcome.bootstrap_sd is None


def test_calibrated_scenarios_follow_the_observed_design(simulated_dataset):
    scenarios = calibrated_scenarios(
        simulated_dataset, [40.0, 60.0], replications=2, seed=4, bootstrap_replicates=0, delta_max=200.0
    )
    assert [s.name for s in scenarios] == ["calibrated_h40", "calibrated_h60"]
    assert [s.kernel.bandwidth.h for s in scenarios] == [40.0, 60.0]
    first, second = scenarios
    assert first.model == second.model and first.seed == second.seed == 4

    g_star = empirical_G(simulated_dataset)
    g_hat = CovarianceEstimate.from_dataset(simulated_dataset, KernelSpec.global_h(40.0)).g_hat()
    assert np.allclose(first.model.G_matrix, g_star, rtol=1e-12)
    noise = np.mean(np.diag(g_star) - np.diag(g_hat))
    assert first.model.sigma_eps == pytest.approx(np.sqrt(max(noise, 0.0)), rel=1e-12)
    assert first.model.rho == MaternCorrelation(phi=120.0, kappa=1.5)
    assert first.block_length == default_block_length(simulated_dataset)
    assert first.imse_ranges == [(0.0, 200.0)]

    data = simulate_dataset(
        first.model, first.n_subjects, first.grid, replicate_rng(4, 0, 0), first.fixed_locations
    )
    for simulated, observed in zip(data.subjects, simulated_dataset.subjects):
        assert np.array_equal(simulated.unit_locations, observed.unit_locations)
    outcome = run_replicate(first, 0)
    assert outcome.rho[0] == 1.0 and outcome.bootstrap_sd is None


def test_fixed_locations_are_validated(scenario):
    fields = scenario.model_dump()
    with pytest.raises(ValidationError):
        ScenarioConfig.model_validate({**fields, "fixed_locations": [[10.0, 20.0]]})
    with pytest.raises(ValidationError):
        ScenarioConfig.model_validate({**fields, "fixed_locations": [[10.0, 20.0], [5.0, 5.0]]})
    with pytest.raises(ValidationError):
        ScenarioConfig.model_validate({**fields, "fixed_locations": [[10.0, 20.0], [5.0, 1500.0]]})
    fixed = ScenarioConfig.model_validate({**fields, "fixed_locations": [[10.0, 20.0, 45.0], [5.0, 60.0]]})
    data = simulate_dataset(fixed.model, 2, fixed.grid, np.random.default_rng(0), fixed.fixed_locations)
    assert [s.n_units for s in data.subjects] == [3, 2]
