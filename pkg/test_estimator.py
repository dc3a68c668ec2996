"""Covariance and correlation estimators against a direct double loop"""

import numpy as np
import pytest

from app.core.errors import DegenerateG, EstimationError, NoSupportAtLag
from app.core.kernels import kernel_eval
from app.core.pairs import center_residuals, enumerate_pairs
from app.models.dataset import Dataset, Subject
from app.models.kernel import KernelFamily, KernelSpec
from app.services.estimator import (
    CovarianceEstimate,
    default_delta_grid,
    estimator_service,
    g_hat,
    pair_weight_A,
    raw_covariance,
    render_surface,
    rho_hat,
    sym_covariance,
)
from conftest import make_dataset


def brute_force(data: Dataset, kernel: KernelSpec, delta: float, symmetrized: bool) -> np.ndarray:
    residuals = center_residuals(data).residuals
    h = kernel.bandwidth_at(delta)
    num = np.zeros((data.m, data.m))
    den = 0.0
    for subject, e in zip(data.subjects, residuals):
        for i, k, lag in enumerate_pairs(subject):
            offset = abs(lag) - abs(delta) if symmetrized else lag - delta
            w = kernel_eval(kernel, offset / h) / h
            num += w * np.outer(e[i - 1], e[k - 1])
            den += w
    if symmetrized:
        num = (num + num.T) / 2.0
    return num / den


def brute_force_rho(data: Dataset, kernel: KernelSpec, delta: float) -> float:
    rows, cols = np.tril_indices(data.m)
    v = brute_force(data, kernel, delta, True)
    g = brute_force(data, kernel, 0.0, True)
    return v[rows, cols].sum() / g[rows, cols].sum()


@pytest.mark.parametrize("family", list(KernelFamily))
@pytest.mark.parametrize("delta", [0.0, 7.5, -12.0, 33.0])
def test_matches_direct_double_loop(small_dataset, family, delta):
    kernel = KernelSpec.global_h(25.0, family)
    estimate = CovarianceEstimate.from_dataset(small_dataset, kernel)
    assert np.allclose(estimate.raw_matrix(delta), brute_force(small_dataset, kernel, delta, False), rtol=1e-10, atol=1e-13)
    assert np.allclose(estimate.sym_matrix(delta), brute_force(small_dataset, kernel, delta, True), rtol=1e-10, atol=1e-13)
    assert estimate.rho_hat(delta) == pytest.approx(brute_force_rho(small_dataset, kernel, delta), rel=1e-10)


def test_symmetry_identities(small_dataset):
    kernel = KernelSpec.global_h(25.0)
    residuals = center_residuals(small_dataset)
    estimate = CovarianceEstimate(residuals, kernel)
    for delta in (3.0, 18.0):
        sym = estimate.sym_matrix(delta)
        assert np.array_equal(sym, sym.T)
        assert np.array_equal(sym, estimate.sym_matrix(-delta))
        # V-hat(x1, x2, delta) == V-hat(x2, x1, -delta)
        assert np.allclose(estimate.raw_matrix(delta), estimate.raw_matrix(-delta).T, rtol=1e-12, atol=1e-15)
    assert raw_covariance(residuals, kernel, 0, 1, 5.0) == pytest.approx(raw_covariance(residuals, kernel, 1, 0, -5.0))
    assert sym_covariance(residuals, kernel, 0, 1, 5.0) == sym_covariance(residuals, kernel, 1, 0, -5.0)


def test_rho_at_zero_is_exactly_one(simulated_dataset, kernel):
    residuals = center_residuals(simulated_dataset)
    assert rho_hat(residuals, kernel, 0.0) == 1.0
    curve = estimator_service.estimate_curve(simulated_dataset, kernel, default_delta_grid(200.0, 21))
    assert curve.rho[0] == 1.0
    assert np.allclose(curve.g_hat, g_hat(residuals, kernel), rtol=1e-10)


def test_grid_rendering_matches_point_evaluation(simulated_dataset, kernel):
    grid = default_delta_grid(200.0, 21)
    residuals = center_residuals(simulated_dataset)
    surface = render_surface(residuals, kernel, grid)
    estimate = CovarianceEstimate(residuals, kernel)
    for d, values in zip(grid, surface.values):
        assert np.allclose(values, estimate.sym_matrix(d), rtol=1e-10, atol=1e-13)
    curve = estimator_service.estimate_curve(simulated_dataset, kernel, grid)
    expected = [estimate.rho_hat(d) for d in grid]
    assert np.allclose(curve.rho, expected, rtol=1e-10, atol=1e-13)


def test_subject_order_does_not_change_point_estimates(simulated_dataset, kernel):
    reordered = Dataset(
        subjects=simulated_dataset.subjects[::-1],
        subunit_grid=simulated_dataset.subunit_grid,
        domain_length=simulated_dataset.domain_length,
    )
    a = CovarianceEstimate.from_dataset(simulated_dataset, kernel)
    b = CovarianceEstimate.from_dataset(reordered, kernel)
    for delta in (0.0, 45.0, 130.0):
        assert a.rho_hat(delta) == b.rho_hat(delta)
        assert np.array_equal(a.sym_matrix(delta), b.sym_matrix(delta))


def test_single_unit_subject_contributes_nothing(small_dataset):
    kernel = KernelSpec.global_h(25.0)
    extra = Subject(id="lonely", unit_locations=[50.0], responses=[[4.0, -2.0]])
    extended = Dataset(
        subjects=[*small_dataset.subjects, extra],
        subunit_grid=small_dataset.subunit_grid,
        domain_length=small_dataset.domain_length,
    )
    a = CovarianceEstimate.from_dataset(small_dataset, kernel)
    b = CovarianceEstimate.from_dataset(extended, kernel)
    assert np.array_equal(a.sym_matrix(10.0), b.sym_matrix(10.0))
    assert a.rho_hat(10.0) == b.rho_hat(10.0)


def test_shift_and_scale_invariance(small_dataset):
    kernel = KernelSpec.global_h(25.0)
    shifted = Dataset(
        subjects=[
            Subject(id=s.id, unit_locations=s.unit_locations + 500.0, responses=3.0 * s.responses + 7.0, origin=500.0)
            for s in small_dataset.subjects
        ],
        subunit_grid=small_dataset.subunit_grid,
        domain_length=small_dataset.domain_length,
    )
    a = CovarianceEstimate.from_dataset(small_dataset, kernel)
    b = CovarianceEstimate.from_dataset(shifted, kernel)
    assert np.allclose(b.g_hat(), 9.0 * a.g_hat(), rtol=1e-9)
    for delta in (0.0, 12.0, 40.0):
        assert b.rho_hat(delta) == pytest.approx(a.rho_hat(delta), rel=1e-9, abs=1e-12)


def test_no_support_raises():
    data = make_dataset([[0.0, 100.0, 200.0], [0.0, 100.0, 200.0]], m=2, domain_length=200.0)
    estimate = CovarianceEstimate.from_dataset(data, KernelSpec.global_h(10.0))
    with pytest.raises(NoSupportAtLag) as info:
        estimate.sym_matrix(50.0)
    assert info.value.code == "no-support-at-lag"
    assert np.isfinite(estimate.sym_matrix(100.0)).all()


def test_unsupported_grid_points_render_as_nan():
    data = make_dataset([[0.0, 100.0, 200.0], [0.0, 100.0, 200.0]], m=2, domain_length=200.0)
    surface = render_surface(center_residuals(data), KernelSpec.global_h(10.0), [50.0, 100.0])
    assert list(surface.missing) == [True, False]


def test_constant_responses_make_G_degenerate():
    locations = [[0.0, 5.0, 9.0], [1.0, 4.0, 8.0]]
    responses = [np.full((3, 1), 2.0), np.full((3, 1), -1.0)]
    data = make_dataset(locations, m=1, responses=responses, domain_length=10.0)
    with pytest.raises(DegenerateG):
        CovarianceEstimate.from_dataset(data, KernelSpec.global_h(6.0)).rho_hat(3.0)


def test_queries_beyond_the_pair_cap_are_rejected(small_dataset):
    estimate = CovarianceEstimate.from_dataset(small_dataset, KernelSpec.global_h(10.0), lag_cap=30.0)
    estimate.sym_matrix(20.0)
    with pytest.raises(EstimationError):
        estimate.sym_matrix(25.0)


def test_pair_weight_matches_direct_sum(small_dataset):
    kernel = KernelSpec.global_h(20.0, KernelFamily.QUARTIC)
    for delta in (0.0, 15.0, -15.0):
        expected = sum(
            kernel_eval(kernel, (lag - delta) / 20.0) / 20.0
            for subject in small_dataset.subjects
            for _, _, lag in enumerate_pairs(subject)
        )
        assert pair_weight_A(small_dataset, kernel, delta) == pytest.approx(expected, rel=1e-12)


def test_two_regime_uses_far_bandwidth_beyond_split(simulated_dataset):
    kernel = KernelSpec.two_regime(20.0, 60.0, 100.0)
    estimate = CovarianceEstimate.from_dataset(simulated_dataset, kernel)
    near = CovarianceEstimate.from_dataset(simulated_dataset, KernelSpec.global_h(20.0))
    far = CovarianceEstimate.from_dataset(simulated_dataset, KernelSpec.global_h(60.0))
    assert np.array_equal(estimate.sym_matrix(80.0), near.sym_matrix(80.0))
    assert np.array_equal(estimate.sym_matrix(150.0), far.sym_matrix(150.0))


def test_curve_frame_has_band_columns_only_with_sd(simulated_dataset, kernel):
    curve = estimator_service.estimate_curve(simulated_dataset, kernel, default_delta_grid(100.0, 11))
    assert list(curve.to_frame().columns) == ["delta", "rho"]
    with_sd = curve.model_copy(update={"sd": np.full(11, 0.1)})
    frame = with_sd.to_frame()
    assert list(frame.columns) == ["delta", "rho", "sd", "lower", "upper"]
    assert frame["upper"].iloc[3] == pytest.approx(curve.rho[3] + 0.2)


def two_unit_dataset() -> Dataset:
    return make_dataset([[0.0, 100.0]], m=1, responses=[np.array([[2.0], [4.0]])], domain_length=100.0)


@pytest.mark.parametrize("h", [1.0, 50.0, 400.0])
def test_two_unit_worked_example(h):
    data = two_unit_dataset()
    residuals = center_residuals(data)
    kernel = KernelSpec.global_h(h)
    assert raw_covariance(residuals, kernel, 0, 0, 100.0) == -1.0
    assert raw_covariance(residuals, kernel, 0, 0, -100.0) == -1.0
    assert sym_covariance(residuals, kernel, 0, 0, 100.0) == -1.0


def test_pair_weight_worked_example():
    data = two_unit_dataset()
    kernel = KernelSpec.global_h(50.0)
    assert pair_weight_A(data, kernel, 100.0) == pytest.approx(0.015, rel=1e-15)
    assert pair_weight_A(data, kernel, 0.0) == 0.0


def test_constant_responses_give_zero_covariance():
    data = make_dataset([[0.0, 30.0, 70.0]], m=2, responses=[np.full((3, 2), 5.0)], domain_length=100.0)
    residuals = center_residuals(data)
    kernel = KernelSpec.global_h(50.0)
    for delta in (0.0, 30.0, -40.0):
        assert raw_covariance(residuals, kernel, 0, 1, delta) == 0.0
    assert np.array_equal(g_hat(residuals, kernel), np.zeros((2, 2)))


FAMILIES = list(KernelFamily)


def random_dataset(rng: np.random.Generator) -> Dataset:
    n_subjects = int(rng.integers(1, 4))
    m = int(rng.integers(1, 4))
    locations = [np.sort(rng.uniform(0.0, 100.0, size=int(rng.integers(2, 5)))) for _ in range(n_subjects)]
    responses = [rng.normal(0.0, 2.0, size=(locs.size, m)) for locs in locations]
    return make_dataset(locations, m=m, responses=responses, domain_length=100.0)


def naive_sums(data: Dataset, kernel: KernelSpec, delta: float, symmetrized: bool):
    """Kernel-weighted residual products and weights, one ordered pair at a time"""
    num = np.zeros((data.m, data.m))
    den = 0.0
    h = kernel.bandwidth_at(delta)
    for subject in data.subjects:
        responses = np.asarray(subject.responses, dtype=float)
        e = responses - responses.mean(axis=0)
        for i, k, lag in enumerate_pairs(subject):
            offset = abs(lag) - abs(delta) if symmetrized else lag - delta
            w = kernel_eval(kernel, offset / h) / h
            for j in range(data.m):
                for l in range(data.m):
                    num[j, l] += w * e[i - 1, j] * e[k - 1, l]
            den += w
    if symmetrized:
        num = (num + num.T) / 2.0
    return num, den


def test_estimators_match_naive_sums_on_random_datasets():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        data = random_dataset(rng)
        family = FAMILIES[int(rng.integers(len(FAMILIES)))]
        kernel = KernelSpec.global_h(float(rng.uniform(20.0, 120.0)), family)
        estimate = CovarianceEstimate.from_dataset(data, kernel)
        residuals = center_residuals(data)
        delta = float(rng.uniform(-80.0, 80.0))
        for symmetrized, target in ((False, estimate.raw_matrix), (True, estimate.sym_matrix)):
            num, den = naive_sums(data, kernel, delta, symmetrized)
            if den == 0.0:
                with pytest.raises(NoSupportAtLag):
                    target(delta)
                continue
            expected = num / den
            scale = np.abs(expected).max()
            assert np.allclose(target(delta), expected, rtol=1e-12, atol=1e-12 * scale)
        num0, den0 = naive_sums(data, kernel, 0.0, True)
        if den0 == 0.0:
            continue
        g = num0 / den0
        assert np.allclose(g_hat(residuals, kernel), g, rtol=1e-12, atol=1e-12 * np.abs(g).max())
        num, den = naive_sums(data, kernel, delta, True)
        if den == 0.0:
            continue
        rows, cols = np.tril_indices(data.m)
        v = num / den
        g_lower = g[rows, cols].sum()
        if abs(g_lower) < 1e-8 * np.abs(g).max():
            continue
        conditioning = np.abs(v[rows, cols]).sum() / abs(g_lower) + np.abs(g[rows, cols]).sum() / abs(g_lower)
        expected_rho = v[rows, cols].sum() / g_lower
        assert rho_hat(residuals, kernel, delta) == pytest.approx(expected_rho, rel=1e-12, abs=1e-12 * conditioning)


@pytest.mark.parametrize("seed", range(10))
def test_exact_identities_on_random_cases(seed):
    rng = np.random.default_rng(seed)
    for _ in range(100):
        data = random_dataset(rng)
        kernel = KernelSpec.global_h(float(rng.uniform(40.0, 150.0)))
        estimate = CovarianceEstimate.from_dataset(data, kernel)
        delta = float(rng.uniform(0.0, 60.0))
        try:
            sym = estimate.sym_matrix(delta)
        except NoSupportAtLag:
            continue
        assert np.array_equal(sym, sym.T)
        assert np.array_equal(sym, estimate.sym_matrix(-delta))
        try:
            forward = estimate.raw_matrix(delta)
        except NoSupportAtLag:
            forward = None
        if forward is not None:
            assert np.allclose(forward, estimate.raw_matrix(-delta).T, rtol=1e-12, atol=1e-14 * np.abs(forward).max())
        try:
            assert estimate.rho_hat(0.0) == 1.0
            rho = estimate.rho_hat(delta)
        except (NoSupportAtLag, DegenerateG):
            continue

        scale = float(rng.uniform(0.1, 10.0))
        offsets = rng.normal(0.0, 5.0, size=data.m)
        shift = float(rng.uniform(0.0, 1000.0))
        moved = Dataset(
            subjects=[
                Subject(
                    id=s.id,
                    unit_locations=s.unit_locations + shift,
                    responses=scale * s.responses + offsets,
                    origin=shift,
                )
                for s in data.subjects
            ],
            subunit_grid=data.subunit_grid,
            domain_length=data.domain_length,
        )
        other = CovarianceEstimate.from_dataset(moved, kernel)
        assert np.allclose(other.sym_matrix(delta), scale * scale * sym, rtol=1e-9, atol=1e-12 * scale * scale * np.abs(sym).max())
        g = estimate.g_hat()
        rows, cols = np.tril_indices(data.m)
        conditioning = (np.abs(sym[rows, cols]).sum() + np.abs(g[rows, cols]).sum()) / abs(g[rows, cols].sum())
        assert other.rho_hat(delta) == pytest.approx(rho, rel=1e-9, abs=1e-9 * conditioning)
