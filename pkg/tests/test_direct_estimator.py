"""Test the direct integral estimator."""
import itertools

import numpy as np
import pytest

from direct_integral import direct_estimator
from direct_integral.direct_estimator import (
    BootstrapError,
    EstimationPipeline,
    FitResult,
    InvalidStateError,
    NonIdentifiableError,
    PipelineConfig,
    WeightScheme,
    bootstrap_covariance,
    compute_G,
    criterion_value,
    fit,
    identifiability_report,
    inner_product,
    invert_to_nu,
)
from direct_integral.experiments import true_path
from direct_integral.ode_core import (
    ContractViolationError,
    InvalidArgumentError,
    OdeModel,
    Trajectory,
    solve_ode,
)
from direct_integral.smoothing import (
    Observations,
    RepeatedObservations,
    SmootherConfig,
    local_poly_values,
)

from .conftest import FHN_NU, LV_THETA, LV_XI


def _uniform(path: Trajectory) -> WeightScheme:
    return WeightScheme.uniform(path.times, path.d)


def test_inner_product_of_monomials():
    """Test <t, t^2> under Lebesgue measure on [0, 1] is 1/4."""
    grid = np.linspace(0, 1, 201)
    W = WeightScheme.uniform(grid, 1)
    value = inner_product(W, grid[:, None], grid[:, None] ** 2)
    assert value.shape == (1, 1)
    assert value[0, 0] == pytest.approx(0.25, abs=2e-4)


def test_inner_product_of_identity_is_total_mass():
    """Test <I, I> is the identity times the length of the interval."""
    grid = np.linspace(0, 1, 11)
    W = WeightScheme.uniform(grid, 3)
    identity = np.broadcast_to(np.eye(3), (grid.size, 3, 3))
    np.testing.assert_allclose(inner_product(W, identity, identity), np.eye(3))


def test_inner_product_with_point_masses():
    """Test point masses sum exactly."""
    grid = np.array([0.3, 0.8])
    W = WeightScheme.discrete(grid, np.array([0.5, 0.5]), d=2)
    f = np.stack([grid, 2 * grid], axis=1)
    assert inner_product(W, f, f)[0, 0] == pytest.approx(1.825)


def test_inner_product_grid_mismatch():
    """Test functions sampled elsewhere are rejected."""
    grid = np.linspace(0, 1, 5)
    W = WeightScheme.uniform(grid, 1)
    with pytest.raises(InvalidArgumentError):
        inner_product(W, np.ones((5, 1)), np.ones((5, 1)), grid=np.linspace(0, 2, 5))
    with pytest.raises(InvalidArgumentError):
        inner_product(W, np.ones((4, 1)), np.ones((4, 1)))


def test_cauchy_schwarz_and_nonnegativity():
    """Test the semi-inner product obeys Cauchy-Schwarz on random functions."""
    rng = np.random.default_rng(7)
    grid = np.sort(np.concatenate(([0.0], rng.uniform(0, 1, 30))))
    W = WeightScheme.custom(grid, rng.uniform(0, 2, size=(grid.size, 2)))
    for _ in range(1000):
        f = rng.normal(size=(grid.size, 2))
        g = rng.normal(size=(grid.size, 2))
        ff = inner_product(W, f, f)[0, 0]
        gg = inner_product(W, g, g)[0, 0]
        assert ff >= -1e-12
        assert abs(inner_product(W, f, g)[0, 0]) <= np.sqrt(ff * gg) + 1e-12


def test_weight_scheme_validation():
    """Test masses must be nonnegative with positive totals."""
    grid = np.linspace(0, 1, 3)
    with pytest.raises(InvalidArgumentError):
        WeightScheme.discrete(grid, np.array([1.0, -1.0, 1.0]), d=1)
    with pytest.raises(InvalidArgumentError):
        WeightScheme.discrete(grid, np.zeros(3), d=1)
    with pytest.raises(InvalidArgumentError):
        WeightScheme("signed", grid, np.ones((3, 1)))
    W = WeightScheme.custom(grid, np.array([2.0, 2.0, 2.0]), d=2)
    np.testing.assert_allclose(W.total_mass, [2.0, 2.0])
    assert W.supports_origin()
    assert not WeightScheme.discrete(np.array([0.3, 0.8]), np.ones(2), d=1).supports_origin()


def test_compute_g_for_constant_path(lv_model):
    """Test G(t) = g(x0) t for a constant path."""
    grid = np.linspace(0, 2, 21)
    state = np.array([1.0, 2.0])
    G = compute_G(lv_model, Trajectory(grid, np.tile(state, (grid.size, 1))))
    np.testing.assert_allclose(G, lv_model.g(state)[None] * grid[:, None, None], atol=1e-12)


def test_compute_g_of_linear_path(exponential_model):
    """Test the integral of t over [0, 1]."""
    grid = np.linspace(0, 1, 1001)
    G = compute_G(exponential_model, Trajectory(grid, grid))
    assert G[0, 0, 0] == 0.0
    assert G[-1, 0, 0] == pytest.approx(0.5, abs=1e-6)


def test_compute_g_tracks_fitzhugh_nagumo(fhn_model, fhn_truth):
    """Test central differences of G recover g along the solution."""
    G = compute_G(fhn_model, fhn_truth)
    step = fhn_truth.times[1] - fhn_truth.times[0]
    slope = (G[2:] - G[:-2]) / (2 * step)
    g = fhn_model.g_path(fhn_truth.values)[1:-1]
    assert np.max(np.abs(slope - g)) < 5e-3 * max(1.0, np.abs(g).max())


def test_compute_g_reports_non_finite_state():
    """Test a non-finite g names the first offending time."""
    model = OdeModel(
        "logarithmic", 1, 1, 1, lambda x: np.array([[np.log(x[0])]]), lambda nu: nu
    )
    grid = np.linspace(0, 1, 11)
    with pytest.raises(InvalidStateError) as err:
        compute_G(model, Trajectory(grid, 0.5 - grid))
    assert err.value.time == pytest.approx(0.5)


def test_fit_exponential_exactly(exponential_model, exponential_path):
    """Test the true path returns the true parameters."""
    result = fit(exponential_model, exponential_path, _uniform(exponential_path))
    assert result.theta_hat[0] == pytest.approx(0.5, abs=1e-5)
    assert result.xi_hat[0] == pytest.approx(1.0, abs=1e-5)
    assert result.cond_c == 1.0
    assert result.nu_hat is None


def test_fit_lotka_volterra_exactly(lv_model, lv_truth):
    """Test the noiseless Lotka-Volterra solution returns its parameters."""
    result = fit(lv_model, lv_truth, _uniform(lv_truth))
    np.testing.assert_allclose(result.theta_hat, LV_THETA, rtol=1e-3)
    np.testing.assert_allclose(result.xi_hat, LV_XI, rtol=1e-3)


def test_fit_fitzhugh_nagumo_exactly(fhn_model, fhn_truth):
    """Test the noiseless FitzHugh-Nagumo solution returns its parameters."""
    result = fit(fhn_model, fhn_truth, _uniform(fhn_truth))
    np.testing.assert_allclose(result.theta_hat, fhn_model.h(FHN_NU), rtol=1e-3)
    np.testing.assert_allclose(result.xi_hat, [0.0, 0.1], atol=1e-3)


def test_quadrature_error_is_second_order(exponential_model):
    """Test doubling the grid cuts the error about four times."""
    errors = []
    for points in (101, 201):
        grid = np.linspace(0, 1, points)
        path = Trajectory(grid, np.exp(0.5 * grid))
        errors.append(abs(fit(exponential_model, path, _uniform(path)).theta_hat[0] - 0.5))
    assert 3 <= errors[0] / errors[1] <= 5


def test_duplicated_column_is_not_identifiable(duplicated_model, exponential_path):
    """Test dependent columns of g raise and report their null space."""
    W = _uniform(exponential_path)
    with pytest.raises(NonIdentifiableError) as err:
        fit(duplicated_model, exponential_path, W)
    assert err.value.cond_c < 1e-10
    report = identifiability_report(duplicated_model, exponential_path, W)
    assert report.rank == 1
    assert not report.identifiable
    null = report.null_space[:, 0]
    assert abs(null @ np.array([1.0, -1.0]) / np.sqrt(2)) >= 0.999


def test_constant_path_rank(lv_model):
    """Test a constant path gives C the rank of g(x0)."""
    grid = np.linspace(0, 1, 51)
    path = Trajectory(grid, np.tile([1.0, 2.0], (grid.size, 1)))
    report = identifiability_report(lv_model, path, _uniform(path))
    assert report.rank == 2
    assert report.null_space.shape == (4, 2)


def test_benchmarks_are_identifiable(fhn_model, fhn_truth, lv_model, lv_truth):
    """Test the benchmark solutions identify the natural parameter."""
    fhn = identifiability_report(fhn_model, fhn_truth, _uniform(fhn_truth))
    assert fhn.rank == 4
    assert fhn.cond_c > 1e-8
    assert identifiability_report(lv_model, lv_truth, _uniform(lv_truth)).identifiable


def _noisy_lv(lv_truth) -> Trajectory:
    rng = np.random.default_rng(2)
    values = lv_truth.values + 0.05 * rng.standard_normal(lv_truth.values.shape)
    return Trajectory(lv_truth.times, values)


def test_criterion_is_minimal_at_estimate(lv_model, lv_truth):
    """Test random perturbations never lower the criterion."""
    path = _noisy_lv(lv_truth)
    W = _uniform(path)
    result = fit(lv_model, path, W)
    G = compute_G(lv_model, path)
    assert criterion_value(lv_model, path, W, result.theta_hat, result.xi_hat, G) == (
        pytest.approx(result.criterion)
    )
    rng = np.random.default_rng(9)
    for _ in range(100):
        delta = rng.normal(size=6)
        delta *= rng.uniform(0, 0.1) / np.linalg.norm(delta)
        value = criterion_value(
            lv_model, path, W, result.theta_hat + delta[:4], result.xi_hat + delta[4:], G
        )
        assert value >= result.criterion * (1 - 1e-9)


def test_known_xi_matches_free_fit(lv_model, lv_truth):
    """Test fixing xi at its estimate leaves theta unchanged."""
    path = _noisy_lv(lv_truth)
    W = _uniform(path)
    free = fit(lv_model, path, W)
    fixed = fit(lv_model, path, W, known_xi=free.xi_hat)
    np.testing.assert_allclose(fixed.theta_hat, free.theta_hat, rtol=0, atol=1e-10)
    np.testing.assert_array_equal(fixed.xi_hat, free.xi_hat)


def test_fit_checks_inputs(lv_model, lv_truth, exponential_model, exponential_path):
    """Test grid, dimension and support checks."""
    with pytest.raises(InvalidArgumentError):
        fit(lv_model, lv_truth, WeightScheme.uniform(np.linspace(0, 1, 7), 2))
    with pytest.raises(ContractViolationError):
        fit(lv_model, lv_truth, _uniform(lv_truth), known_xi=np.ones(3))
    grid = exponential_path.times
    masses = np.where(grid > 0.5, 1.0, 0.0)
    with pytest.raises(InvalidArgumentError):
        fit(exponential_model, exponential_path, WeightScheme.discrete(grid, masses, d=1))


def test_fit_result_rejects_indefinite_covariance():
    """Test a covariance with a negative eigenvalue is rejected."""
    with pytest.raises(InvalidArgumentError):
        FitResult(np.zeros(2), np.zeros(1), 1.0, 0.0, sigma_hat=np.diag([1.0, -1.0]))


def _exponential_obs(n: int, noise: float, seed: int = 0) -> Observations:
    times = np.linspace(0, 1, n)
    rng = np.random.default_rng(seed)
    return Observations(times, np.exp(0.5 * times) + noise * rng.standard_normal(n))


def test_bootstrap_of_exact_data_is_zero(exponential_model):
    """Test data the smoother reproduces exactly gives a zero covariance."""
    times = np.linspace(0, 1, 51)
    obs = Observations(times, 1.0 + times)
    pipeline = EstimationPipeline(
        exponential_model, PipelineConfig("smooth", SmootherConfig(order=1, bandwidth=0.3))
    )
    result = bootstrap_covariance(obs, pipeline, 5, seed=1)
    np.testing.assert_allclose(result.sigma, 0.0, atol=1e-20)


def test_bootstrap_matches_resampling_loop(exponential_model):
    """Test the covariance against a plain resample loop on the same streams."""
    obs = _exponential_obs(20, 0.05)
    cfg = SmootherConfig(order=1, bandwidth=0.5)
    pipeline = EstimationPipeline(exponential_model, PipelineConfig("smooth", cfg))
    result = bootstrap_covariance(obs, pipeline, 3, seed=42)

    fitted = local_poly_values(obs, cfg, obs.times)
    residuals = obs.values - fitted
    residuals = residuals - residuals.mean(axis=0)
    thetas = []
    for b in range(3):
        rng = np.random.default_rng(np.random.SeedSequence(42, spawn_key=(b,)))
        index = rng.integers(0, 20, size=(20, 1))
        draw = residuals[index[:, 0], 0][:, None]
        thetas.append(pipeline.fit(Observations(obs.times, fitted + draw, 1.0)).theta_hat)
    thetas = np.array(thetas)
    centered = thetas - thetas.mean(axis=0)
    np.testing.assert_allclose(result.thetas, thetas, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(result.sigma, centered.T @ centered / 3, rtol=1e-8, atol=1e-16)


def test_bootstrap_covariance_is_psd_and_thread_independent(fhn_model):
    """Test the FitzHugh-Nagumo bootstrap covariance is PSD and reproducible."""
    times = np.linspace(0, 20, 201)
    truth = np.linspace(0, 20, 4001)
    values = solve_ode(fhn_model, fhn_model.h(FHN_NU), [0.0, 0.1], truth).values[::20]
    rng = np.random.default_rng(4)
    obs = Observations(times, values + np.sqrt(0.05) * rng.standard_normal(values.shape))
    pipeline = EstimationPipeline(fhn_model)
    single = bootstrap_covariance(obs, pipeline, 100, seed=3)
    sigma = single.sigma
    np.testing.assert_allclose(sigma, sigma.T)
    assert np.linalg.eigvalsh(sigma).min() >= -1e-12
    threaded = bootstrap_covariance(obs, pipeline, 100, seed=3, threads=4)
    np.testing.assert_array_equal(threaded.sigma, sigma)


def test_bootstrap_reports_failed_replicate(exponential_model, monkeypatch):
    """Test a failing replicate fit is reported with its index."""
    obs = _exponential_obs(20, 0.05)
    pipeline = EstimationPipeline(
        exponential_model, PipelineConfig("smooth", SmootherConfig(bandwidth=0.5))
    )

    def failing(prepared, values):
        raise NonIdentifiableError(np.array([0.0, 1.0]))

    monkeypatch.setattr(pipeline, "fit_values", failing)
    with pytest.raises(BootstrapError) as err:
        bootstrap_covariance(obs, pipeline, 4, seed=0)
    assert err.value.replicate == 0
    with pytest.raises(InvalidArgumentError):
        bootstrap_covariance(obs, pipeline, 1, seed=0)


def test_step_pipeline(lv_model):
    """Test the step pipeline on exact repeated measures."""
    times = 14.9 * np.arange(1, 31) / 30
    truth = true_path(lv_model, LV_THETA, LV_XI, times)
    obs = RepeatedObservations(times, tuple(np.tile(row, (2, 1)) for row in truth), 14.9)
    pipeline = EstimationPipeline(lv_model, PipelineConfig("step"))
    result = pipeline.fit(obs)
    assert result.theta_hat.shape == (4,)
    assert np.all(np.isfinite(result.theta_hat))
    with pytest.raises(InvalidArgumentError):
        EstimationPipeline(lv_model).fit(obs)
    with pytest.raises(ContractViolationError):
        EstimationPipeline(lv_model, PipelineConfig(known_xi=(1.0,)))


def test_invert_exact_preimage(fhn_model):
    """Test a theta in the image of h maps back to its preimage."""
    estimate = invert_to_nu(fhn_model, fhn_model.h(FHN_NU), np.eye(4))
    np.testing.assert_allclose(estimate.nu, FHN_NU, atol=1e-6)
    assert estimate.distance < 1e-6
    assert estimate.converged


def test_invert_identity_link_short_circuits(lv_model):
    """Test the identity link returns theta without searching."""
    theta = np.array([0.4, 0.6, 0.5, 0.45])
    estimate = invert_to_nu(lv_model, theta, np.eye(4))
    np.testing.assert_array_equal(estimate.nu, theta)
    assert estimate.evaluations == 0


def test_invert_matches_grid_search(fhn_model):
    """Test the simplex search agrees with a brute force grid search."""
    theta = fhn_model.h(FHN_NU) + 1e-3 * np.array([1.0, -1.0, 1.0, -1.0])
    estimate = invert_to_nu(fhn_model, theta)
    offsets = np.arange(-20, 21) * 1e-3
    alpha, beta, gamma = np.meshgrid(*(FHN_NU[i] + offsets for i in range(3)), indexing="ij")
    image = np.stack([gamma, 1 / gamma, alpha / gamma, beta / gamma], axis=-1)
    distance = np.linalg.norm(image - theta, axis=-1)
    best = np.unravel_index(np.argmin(distance), distance.shape)
    grid_nu = np.array([alpha[best], beta[best], gamma[best]])
    np.testing.assert_allclose(estimate.nu, grid_nu, atol=2e-3)


def test_invert_is_scale_equivariant(fhn_model):
    """Test scaling the covariance leaves the minimizer in place."""
    rng = np.random.default_rng(8)
    factor = rng.normal(size=(4, 4))
    sigma = factor @ factor.T + 0.1 * np.eye(4)
    theta = fhn_model.h(FHN_NU) + 0.01 * rng.normal(size=4)
    base = invert_to_nu(fhn_model, theta, sigma)
    scaled = invert_to_nu(fhn_model, theta, 7.3 * sigma)
    np.testing.assert_allclose(scaled.nu, base.nu, atol=1e-6)


def test_invert_rejects_indefinite_covariance(fhn_model):
    """Test a covariance that is not PSD is rejected."""
    sigma = np.diag([1.0, 1.0, 1.0, -0.5])
    with pytest.raises(InvalidArgumentError):
        invert_to_nu(fhn_model, fhn_model.h(FHN_NU), sigma)


def test_invert_flags_evaluation_cap(fhn_model, monkeypatch):
    """Test hitting the evaluation cap returns the best point unconverged."""
    monkeypatch.setattr(direct_estimator, "SIMPLEX_MAXFEV", 5)
    theta = fhn_model.h(FHN_NU) + 0.05
    estimate = invert_to_nu(fhn_model, theta, initial=np.array([1.0, 1.0, 1.0]))
    assert not estimate.converged
    assert np.all(np.isfinite(estimate.nu))


def test_singular_covariance_is_floored(fhn_model):
    """Test a rank deficient covariance still gives a finite distance."""
    sigma = np.zeros((4, 4))
    sigma[0, 0] = 1.0
    estimate = invert_to_nu(fhn_model, fhn_model.h(FHN_NU), sigma)
    assert np.isfinite(estimate.distance)


def test_estimate_adds_nu_and_sigma(fhn_model):
    """Test the full pipeline fills in nu, sigma and convergence."""
    times = np.linspace(0, 20, 201)
    values = true_path(fhn_model, fhn_model.h(FHN_NU), np.array([0.0, 0.1]), times)
    rng = np.random.default_rng(6)
    obs = Observations(times, values + 0.1 * rng.standard_normal(values.shape))
    result = EstimationPipeline(fhn_model).estimate(obs, bootstrap=5, seed=1)
    assert result.nu_hat.shape == (3,)
    assert result.sigma_hat.shape == (4, 4)
    assert result.converged
    for left, right in itertools.combinations(range(4), 2):
        assert result.sigma_hat[left, right] == result.sigma_hat[right, left]


def test_origin_needs_mass_at_zero_for_every_component(exponential_model):
    """Test a measure that only charges points after 0 does not support it."""
    grid = np.linspace(0, 1, 5)
    assert WeightScheme.discrete(grid, np.ones(5), d=2).supports_origin()
    late = np.array([0.0, 1.0, 1.0, 1.0, 1.0])
    assert not WeightScheme.discrete(grid, late, d=1).supports_origin()
    mixed = np.stack([np.ones(5), late], axis=1)
    assert not WeightScheme.discrete(grid, mixed).supports_origin()
    path = Trajectory(grid, np.exp(0.3 * grid))
    with pytest.raises(InvalidArgumentError, match="support"):
        fit(exponential_model, path, WeightScheme.discrete(grid, late, d=1))
