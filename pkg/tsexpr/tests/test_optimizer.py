import math

import numpy as np
import pytest

from tsexpr.exceptions import EmptyProblemError
from tsexpr.expr import parse_prefix, to_tree
from tsexpr.optimizer import (
    OptimizerConfig,
    fit_coefficients,
    line_minimize,
    powell_minimize,
)
from tsexpr.timeseries import TimeSeries
from tsexpr.utils import derive_rng


def test_line_minimize_quadratic():
    assert line_minimize(lambda a: (a - 2.0) ** 2) == pytest.approx(2.0, abs=1e-6)


def test_line_minimize_negative_direction():
    assert line_minimize(lambda a: (a + 3.0) ** 2) == pytest.approx(-3.0, abs=1e-6)


def test_line_minimize_flat_function():
    assert line_minimize(lambda a: 1.0) == 0.0


def test_line_minimize_treats_nan_as_infinite():
    def objective(a):
        return math.nan if a < 0 else (a - 1.0) ** 2

    assert line_minimize(objective) == pytest.approx(1.0, abs=1e-6)


def test_powell_quadratic():
    def objective(x):
        return (x[0] - 3.0) ** 2 + 10 * (x[1] + 1.0) ** 2 + (x[0] - 3.0) * (x[1] + 1.0)

    x, f = powell_minimize(objective, [0.0, 0.0])
    np.testing.assert_allclose(x, [3.0, -1.0], atol=1e-4)
    assert f == pytest.approx(0.0, abs=1e-8)


def test_powell_never_worse_than_start():
    def objective(x):
        return abs(x[0]) + abs(x[1] - 2)

    start = np.array([0.5, 0.5])
    _, f = powell_minimize(objective, start)
    assert f <= objective(start)


def test_powell_empty_problem():
    with pytest.raises(EmptyProblemError):
        powell_minimize(lambda x: 0.0, [])


def test_powell_non_finite_start():
    x, f = powell_minimize(lambda x: math.inf, [1.0])
    np.testing.assert_array_equal(x, [1.0])
    assert f == math.inf


def test_fast_settings():
    cfg = OptimizerConfig.fast(n_restarts=3)
    assert cfg.max_outer_iters == 20
    assert cfg.n_restarts == 3


@pytest.mark.parametrize("field", ["f_tol", "max_outer_iters", "init_scale"])
def test_invalid_settings(field):
    with pytest.raises(ValueError):
        OptimizerConfig(**{field: 0})


def test_fit_linear_coefficients():
    t = np.arange(10, dtype=float)
    series = TimeSeries(t, 2 * t + 1)
    tree = to_tree(parse_prefix("add mul C t C"))

    coeffs, error = fit_coefficients(tree, series, rng=derive_rng(0))
    np.testing.assert_allclose(coeffs, [2.0, 1.0], atol=1e-5)
    assert error < 1e-4


def test_fit_without_coefficients():
    series = TimeSeries.from_values([0.0, 1.0, 3.0])
    tree = to_tree(parse_prefix("t"))

    coeffs, error = fit_coefficients(tree, series)
    assert coeffs.size == 0
    assert error == pytest.approx(1.0)


def test_fit_is_deterministic():
    series = TimeSeries.from_values(np.sin(np.arange(12) * 0.5) * 3)
    tree = to_tree(parse_prefix("mul C sin mul C t"))

    first = fit_coefficients(tree, series, rng=derive_rng(5))
    second = fit_coefficients(tree, series, rng=derive_rng(5))
    np.testing.assert_array_equal(first[0], second[0])
    assert first[1] == second[1]


def test_line_minimize_cosine():
    assert line_minimize(math.cos) == pytest.approx(math.pi, abs=1e-6)


def test_line_minimize_monotone_function():
    assert line_minimize(lambda a: a) == 0.0


@pytest.mark.parametrize("dim", [1, 2, 3, 4, 5])
def test_powell_solves_quadratics(dim):
    rng = np.random.default_rng(dim)
    basis = rng.normal(size=(dim, dim))
    hessian = np.eye(dim) + 0.5 * basis @ basis.T / dim
    center = 0.5 * np.arange(1, dim + 1)

    def objective(x):
        diff = x - center
        return float(diff @ hessian @ diff)

    x, f = powell_minimize(objective, np.zeros(dim))
    np.testing.assert_allclose(x, center, atol=1e-6)
    assert f == pytest.approx(0.0, abs=1e-10)


def test_powell_rosenbrock():
    def rosenbrock(x):
        return (1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2

    cfg = OptimizerConfig(max_outer_iters=1000)
    x, _ = powell_minimize(rosenbrock, [-1.2, 1.0], cfg)
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-4)


def test_fit_constant_is_the_median():
    series = TimeSeries.from_values([1.0, 2.0, 3.0])
    tree = to_tree(parse_prefix("C"))

    coeffs, error = fit_coefficients(tree, series, rng=derive_rng(0))
    assert coeffs[0] == pytest.approx(2.0, abs=1e-3)
    assert error == pytest.approx(2.0, abs=1e-3)


def test_fit_proportional_series():
    t = np.arange(10, dtype=float)
    tree = to_tree(parse_prefix("mul C t"))

    coeffs, error = fit_coefficients(tree, TimeSeries(t, 2 * t), rng=derive_rng(0))
    assert coeffs[0] == pytest.approx(2.0, abs=1e-4)
    assert error == pytest.approx(0.0, abs=1e-3)
