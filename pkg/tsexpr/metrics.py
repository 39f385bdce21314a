"""Search reward and evaluation metrics.

The reward of an expression f with s tree nodes on a series {(t_i, v_i)} is::

    eta ** s / (1 + sum_i |v_i - f(t_i)|)

Note that the error term is the sum of absolute errors, not a root mean square.
Any non-finite prediction makes the reward 0.
"""
import logging
import math
from datetime import timedelta
from typing import Union

import attr
import numpy as np

from .exceptions import ShapeError, UndefinedVarianceError
from .expr import ExpressionTree, evaluate
from .timeseries import TimeSeries
from .utils import as_seconds

_LOGGER = logging.getLogger(__name__)


def _validate_eta(instance, attribute, value):
    if not 0 < value < 1:
        raise ValueError("eta must be strictly between 0 and 1, got %s" % value)


@attr.s(frozen=True)
class RewardConfig:
    eta = attr.ib(type=float, default=0.99, converter=float, validator=_validate_eta)


def total_abs_error(series: TimeSeries, tree: ExpressionTree, coeffs) -> float:
    """Sum of absolute errors, ``inf`` if any prediction is non-finite."""
    predicted = evaluate(tree, coeffs, series.timestamps)
    if not np.all(np.isfinite(predicted)):
        return math.inf
    return float(np.sum(np.abs(series.values - predicted)))


def reward_from_error(error: float, size: int, cfg: RewardConfig) -> float:
    if not math.isfinite(error):
        return 0.0
    return cfg.eta ** size / (1.0 + error)


def reward(
    series: TimeSeries, tree: ExpressionTree, coeffs, cfg: RewardConfig = RewardConfig()
) -> float:
    """Return the parsimony-weighted fit reward in [0, 1]."""
    return reward_from_error(total_abs_error(series, tree, coeffs), tree.size, cfg)


def _pair(predicted, actual):
    predicted = np.asarray(predicted, dtype=float).ravel()
    actual = np.asarray(actual, dtype=float).ravel()
    if predicted.size != actual.size:
        raise ShapeError(
            "Got %s predictions for %s values" % (predicted.size, actual.size)
        )
    if actual.size < 2:
        raise UndefinedVarianceError("Metrics need at least two values")
    return predicted, actual


def r_squared(predicted, actual) -> float:
    """Coefficient of determination, negative for fits worse than the mean."""
    predicted, actual = _pair(predicted, actual)
    ss_tot = float(np.sum((actual - np.mean(actual)) ** 2))
    if ss_tot == 0:
        raise UndefinedVarianceError("R2 is undefined for a constant series")
    ss_res = float(np.sum((actual - predicted) ** 2))
    return 1.0 - ss_res / ss_tot


def corr(predicted, actual) -> float:
    """Pearson correlation coefficient."""
    predicted, actual = _pair(predicted, actual)
    dp = predicted - np.mean(predicted)
    da = actual - np.mean(actual)
    sp = float(np.sum(dp * dp))
    sa = float(np.sum(da * da))
    if sp == 0 or sa == 0:
        raise UndefinedVarianceError("Correlation is undefined for constant input")
    value = float(np.sum(dp * da)) / math.sqrt(sp * sa)
    return min(1.0, max(-1.0, value))


def atc(total_elapsed: Union[float, timedelta], n_samples: int) -> float:
    """Average time cost per sample in seconds."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    return as_seconds(total_elapsed) / n_samples
