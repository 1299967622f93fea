import math

import numpy as np
import pytest
from scipy.optimize import minimize as scipy_minimize

from conftest import random_training_data
from surrogate_kit import gp_core
from surrogate_kit.convenience_types import make_box
from surrogate_kit.errors import DomainViolation, InputError
from surrogate_kit.gp_core import (
    Design,
    HyperparameterBounds,
    Hyperparameters,
    TrainingData,
    default_bounds,
    default_hyperparameters,
    fit,
    kernel_eval,
    kernel_matrix,
    nlml,
    optimize_hyperparameters,
    predict,
    predict_gradient,
)


def one_point_data(domain, tolerance=0.1, value=1.0):
    design = Design([[0.0] * domain.dim], [tolerance], domain)
    return TrainingData(design, [[value]])


def dense_posterior(data, h, jitter, query):
    """Mean and variance by dense solves, without the Cholesky factor."""
    X, y = data.design.points, data.values
    C = np.array([[kernel_eval(a, b, h) for b in X] for a in X])
    C += np.diag(data.design.tolerances**2) + jitter * np.eye(len(X))
    k = np.array([kernel_eval(query, b, h) for b in X])
    mean = k @ np.linalg.solve(C, y)
    variance = kernel_eval(query, query, h) - k @ np.linalg.solve(C, k)
    return mean, variance


def bordered_posterior(data, h, jitter, query):
    """Mean and variance as the last entry of Gamma = (K^-1 + E^-1)^-1.

    K covers the design points plus the query; E^-1 has a zero for the query.
    """
    X = np.vstack([data.design.points, query])
    K = kernel_matrix(X, X, h)
    noise_precision = np.append(1.0 / (data.design.tolerances**2 + jitter), 0.0)
    gamma = np.linalg.inv(np.linalg.inv(K) + np.diag(noise_precision))
    values = np.vstack([data.values, np.zeros((1, data.output_dim))])
    mean = gamma @ (noise_precision[:, None] * values)
    return mean[-1], gamma[-1, -1]


def random_instance(rng, n_max=5, m=2):
    """Random data in a unit box of dimension 1 to 3, with random hyperparameters."""
    d = int(rng.integers(1, 4))
    domain = make_box(np.zeros(d), np.ones(d))
    n = int(rng.integers(1, n_max + 1))
    data = random_training_data(rng, domain, n=n, m=m, tolerance_range=(0.05, 0.2))
    h = Hyperparameters(rng.uniform(0.5, 2.0), rng.uniform(0.3, 0.8, size=d))
    return data, h


class TestKernel:
    def test_zero_distance_gives_signal_variance(self):
        h = Hyperparameters(2.0, [0.3, 0.7])
        assert kernel_eval([0.2, 0.4], [0.2, 0.4], h) == 2.0

    def test_unit_distance(self):
        h = Hyperparameters(1.0, [1.0, 1.0])
        assert kernel_eval([0.0, 0.0], [0.6, 0.8], h) == pytest.approx(math.exp(-0.5))

    def test_matrix_matches_scalar_formula(self, rng):
        h = Hyperparameters(1.7, [0.3, 0.9])
        X, Y = rng.random((4, 2)), rng.random((3, 2))
        expected = np.array(
            [
                [1.7 * math.exp(-0.5 * (((x - y) / [0.3, 0.9]) ** 2).sum()) for y in Y]
                for x in X
            ]
        )
        np.testing.assert_allclose(kernel_matrix(X, Y, h), expected, rtol=1e-13)


class TestHyperparameters:
    def test_unbounded_is_fixed(self):
        h = Hyperparameters(1.0, [0.5])
        np.testing.assert_array_equal(h.lower, h.upper)

    def test_rejects_nonpositive(self):
        with pytest.raises(InputError):
            Hyperparameters(0.0, [0.5])

    def test_from_vector_clips_into_box(self):
        h = Hyperparameters.from_vector([5.0, 0.001], [0.1, 0.01], [2.0, 1.0])
        np.testing.assert_allclose(h.as_vector(), [2.0, 0.01])


class TestDesign:
    def test_rejects_point_outside_domain(self, unit_square):
        with pytest.raises(DomainViolation):
            Design([[0.5, 1.5]], [0.1], unit_square)

    def test_rejects_nonpositive_tolerance(self, unit_square):
        with pytest.raises(InputError):
            Design([[0.5, 0.5]], [0.0], unit_square)

    def test_close_points_rejected(self, unit_square):
        design = Design([[0.5, 0.5], [0.5, 0.5 + 1e-6]], [0.1, 0.1], unit_square)
        with pytest.raises(InputError):
            design.check_separation()

    def test_extending_with_close_point_rejected(self, unit_square):
        design = Design([[0.5, 0.5], [0.9, 0.9]], [0.1, 0.1], unit_square)
        with pytest.raises(InputError):
            design.extended([[0.5, 0.5 + 1e-6]], [0.1])
        with pytest.raises(InputError):
            design.extended([[0.2, 0.2], [0.2 + 1e-6, 0.2]], [0.1, 0.1])
        assert design.extended([[0.2, 0.2]], [0.1]).size == 3

    def test_refinement_order(self, unit_square):
        design = Design([[0.1, 0.1], [0.9, 0.9]], [0.1, 0.1], unit_square)
        refined = design.with_tolerances([0.05, 0.1]).extended([[0.5, 0.5]], [0.2])
        assert refined.refines(design)
        assert not design.refines(refined)
        assert not design.with_tolerances([0.2, 0.1]).refines(design)


class TestFit:
    def test_no_data_recovers_prior(self, unit_square):
        h = Hyperparameters(1.5, [0.3, 0.3])
        model = fit(TrainingData.empty(unit_square, 2), h)
        mean, std = predict(model, [0.3, 0.6])
        np.testing.assert_array_equal(mean, [0.0, 0.0])
        np.testing.assert_allclose(std, math.sqrt(1.5))

    def test_one_point_closed_form(self, unit_interval):
        model = fit(one_point_data(unit_interval), Hyperparameters(1.0, [1.0]))
        mean, variance = model.predict_mean_variance([0.0])
        assert mean[0, 0] == pytest.approx(1 / 1.01, rel=1e-8)
        assert variance[0] == pytest.approx(1 - 1 / 1.01, rel=1e-7)

    def test_matches_dense_solve(self, rng):
        for _ in range(100):
            data, h = random_instance(rng)
            model = fit(data, h)
            for query in rng.random((3, data.design.dim)):
                mean, variance = model.predict_mean_variance(query)
                expected_mean, expected_variance = dense_posterior(data, h, model.jitter, query)
                np.testing.assert_allclose(mean[0], expected_mean, rtol=1e-10, atol=1e-12)
                assert variance[0] == pytest.approx(expected_variance, rel=1e-10, abs=1e-12)

    def test_matches_bordered_posterior_covariance(self, rng, unit_square):
        points = [[0.1, 0.1], [0.9, 0.1], [0.1, 0.9], [0.9, 0.9]]
        h = Hyperparameters(1.0, [0.25, 0.25])
        for _ in range(20):
            design = Design(points, rng.uniform(0.05, 0.2, size=4), unit_square)
            data = TrainingData(design, rng.normal(size=(4, 2)))
            model = fit(data, h)
            query = rng.uniform(0.3, 0.7, size=2)
            mean, variance = model.predict_mean_variance(query)
            expected_mean, expected_variance = bordered_posterior(data, h, model.jitter, query)
            np.testing.assert_allclose(mean[0], expected_mean, rtol=1e-8, atol=1e-12)
            assert variance[0] == pytest.approx(expected_variance, rel=1e-8)

    def test_far_query_is_prior(self, unit_square):
        data = TrainingData(Design([[0.5, 0.5]], [0.01], unit_square), [[3.0]])
        model = fit(data, Hyperparameters(2.0, [0.1, 0.1]))
        mean, std = predict(model, [100.0, 100.0])
        assert mean[0] == pytest.approx(0.0, abs=1e-300)
        assert std[0] == pytest.approx(math.sqrt(2.0))

    def test_accurate_point_is_interpolated(self, unit_square):
        data = TrainingData(Design([[0.5, 0.5]], [1e-8], unit_square), [[3.0]])
        model = fit(data, Hyperparameters(1.0, [0.3, 0.3]))
        mean, std = predict(model, [0.5, 0.5])
        assert mean[0] == pytest.approx(3.0, abs=1e-6)
        assert std[0] < 1e-4

    def test_variance_never_negative(self, small_model, rng):
        _, variance = small_model.predict_mean_variance(rng.random((200, 2)))
        assert np.all(variance >= 0.0)


class TestGradient:
    def test_symmetric_points_give_zero_gradient(self, unit_interval):
        design = Design([[0.2], [0.8]], [0.1, 0.1], unit_interval)
        model = fit(TrainingData(design, [[1.0], [1.0]]), Hyperparameters(1.0, [0.3]))
        np.testing.assert_allclose(predict_gradient(model, [0.5]), 0.0, atol=1e-14)

    def test_one_point_closed_form(self, unit_interval):
        model = fit(one_point_data(unit_interval), Hyperparameters(1.0, [1.0]))
        gradient = predict_gradient(model, [1.0])
        assert gradient.shape == (1, 1)
        assert gradient[0, 0] == pytest.approx(-math.exp(-0.5) / 1.01, rel=1e-8)

    def test_matches_finite_differences(self, rng):
        step = 1e-5
        for _ in range(100):
            data, h = random_instance(rng, m=3)
            model = fit(data, h)
            d = data.design.dim
            query = rng.uniform(0.1, 0.9, size=d)
            jacobian = predict_gradient(model, query)
            scale = 1.0 + np.abs(jacobian).max()
            for k in range(d):
                offset = np.zeros(d)
                offset[k] = step
                difference = (model.value(query + offset) - model.value(query - offset)) / (
                    2 * step
                )
                np.testing.assert_allclose(jacobian[:, k], difference, rtol=1e-6, atol=1e-8 * scale)

    def test_batched_matches_single(self, small_model, rng):
        points = rng.random((3, 2))
        batched = small_model.predict_gradient(points)
        for point, jacobian in zip(points, batched):
            np.testing.assert_allclose(small_model.jacobian(point), jacobian, rtol=1e-12, atol=1e-15)


class TestNLML:
    def test_one_point_closed_form(self, unit_interval):
        value, _ = nlml(one_point_data(unit_interval), Hyperparameters(1.0, [1.0]))
        expected = 0.5 / 1.01 + 0.5 * math.log(1.01) + 0.5 * math.log(2 * math.pi)
        assert value == pytest.approx(expected, rel=1e-8)
        assert value == pytest.approx(1.41896, abs=1e-5)

    def test_zero_data(self, rng, unit_square):
        data = random_training_data(rng, unit_square, n=4, m=1)
        data = TrainingData(data.design, np.zeros((4, 1)))
        h = Hyperparameters(1.0, [0.3, 0.3])
        model = fit(data, h)
        value, _ = nlml(data, h)
        log_det = 2 * np.sum(np.log(np.diag(model.posteriors[0].cholesky)))
        assert value == pytest.approx(0.5 * log_det + 2 * math.log(2 * math.pi), rel=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(100):
            data, h = random_instance(rng, n_max=6)
            vector = h.as_vector()
            value, gradient = nlml(data, h)
            for k in range(len(vector)):
                step = 1e-6 * vector[k]
                up, down = vector.copy(), vector.copy()
                up[k] += step
                down[k] -= step
                difference = (
                    nlml(data, Hyperparameters.from_vector(up))[0]
                    - nlml(data, Hyperparameters.from_vector(down))[0]
                ) / (2 * step)
                assert gradient[k] == pytest.approx(
                    difference, rel=1e-6, abs=1e-7 * (1 + abs(value))
                )


class TestMonotonicity:
    def test_smaller_tolerance_never_increases_variance(self, rng, unit_square):
        h = Hyperparameters(1.0, [0.3, 0.3])
        for _ in range(100):
            data = random_training_data(rng, unit_square, n=5, m=1)
            queries = rng.random((5, 2))
            _, before = fit(data, h).predict_mean_variance(queries)
            tolerances = data.design.tolerances.copy()
            tolerances[rng.integers(5)] *= 0.5
            refined = TrainingData(data.design.with_tolerances(tolerances), data.values)
            _, after = fit(refined, h).predict_mean_variance(queries)
            assert np.all(after <= before + 1e-12)

    def test_adding_point_never_increases_variance(self, rng, unit_square):
        h = Hyperparameters(1.0, [0.3, 0.3])
        for _ in range(20):
            data = random_training_data(rng, unit_square, n=5, m=1)
            queries = rng.random((5, 2))
            _, before = fit(data, h).predict_mean_variance(queries)
            bigger = TrainingData(
                data.design.extended(rng.random((1, 2)), [0.05]),
                np.vstack([data.values, [[0.0]]]),
            )
            _, after = fit(bigger, h).predict_mean_variance(queries)
            assert np.all(after <= before + 1e-12)


class TestOptimizeHyperparameters:
    def test_never_worse_than_init(self, rng, unit_square):
        data = random_training_data(rng, unit_square, n=8, m=2)
        bounds = default_bounds(data)
        init = default_hyperparameters(data, bounds)
        result = optimize_hyperparameters(data, bounds, init)
        assert result.value <= nlml(data, init)[0] + 1e-12
        vector = result.hyperparameters.as_vector()
        assert np.all(vector >= bounds.lower * (1 - 1e-12))
        assert np.all(vector <= bounds.upper * (1 + 1e-12))

    def test_stationary_init_is_a_fixed_point(self, rng, unit_square):
        data = random_training_data(rng, unit_square, n=8, m=1)
        bounds = default_bounds(data)
        first = optimize_hyperparameters(data, bounds, default_hyperparameters(data, bounds))
        second = optimize_hyperparameters(data, bounds, first.hyperparameters)
        assert second.value <= first.value + 1e-12 * (1 + abs(first.value))
        if first.converged:
            np.testing.assert_array_equal(
                second.hyperparameters.as_vector(), first.hyperparameters.as_vector()
            )
            assert second.value == pytest.approx(first.value, abs=1e-12)

    def test_restarts_come_after_the_initial_start(self, rng, unit_square, monkeypatch):
        data = random_training_data(rng, unit_square, n=8, m=1)
        bounds = default_bounds(data)
        init = default_hyperparameters(data, bounds)
        starts = []

        def recording_minimize(fun, x0, **kwargs):
            starts.append(np.array(x0))
            return scipy_minimize(fun, x0, **kwargs)

        monkeypatch.setattr(gp_core, "minimize", recording_minimize)
        optimize_hyperparameters(data, bounds, init, restarts=5)
        assert len(starts) == 6
        np.testing.assert_allclose(starts[0], np.log(init.as_vector()))

    def test_collapsed_box_returns_that_point(self, rng, unit_square):
        data = random_training_data(rng, unit_square, n=5, m=1)
        point = np.array([0.7, 0.2, 0.3])
        bounds = HyperparameterBounds(point.copy(), point.copy())
        result = optimize_hyperparameters(data, bounds, Hyperparameters.from_vector(point))
        np.testing.assert_array_equal(result.hyperparameters.as_vector(), point)
        assert result.converged

    def test_recovers_lengthscale_of_sampled_gp(self, unit_interval):
        rng = np.random.default_rng(7)
        truth = Hyperparameters(1.0, [0.2])
        points = np.sort(rng.random((40, 1)), axis=0)
        covariance = kernel_matrix(points, points, truth) + 1e-8 * np.eye(40)
        values = np.linalg.cholesky(covariance) @ rng.normal(size=(40, 1))
        values += 1e-3 * rng.normal(size=(40, 1))
        data = TrainingData(Design(points, np.full(40, 1e-3), unit_interval), values)
        bounds = default_bounds(data)
        result = optimize_hyperparameters(data, bounds, default_hyperparameters(data, bounds))
        lengthscale = result.hyperparameters.lengthscales[0]
        assert 0.1 <= lengthscale <= 0.4
