"""Derivative-free coefficient fitting.

:func:`powell_minimize` implements Powell's direction set method: the direction set
starts as the coordinate axes, every outer iteration line-minimizes along each
direction and the direction of largest decrease is replaced by the net displacement
when the extrapolation test allows it. Line minimization brackets a minimum by golden
ratio expansion and refines it with Brent's parabolic/golden-section search.

Non-finite objective values are treated as ``+inf`` everywhere.
"""
import logging
import math
from typing import Callable, Optional, Tuple

import attr
import numpy as np

from .exceptions import EmptyProblemError
from .expr import ExpressionTree
from .metrics import total_abs_error
from .timeseries import TimeSeries

_LOGGER = logging.getLogger(__name__)

GOLDEN_GROWTH = 1.618033988749895
GOLDEN_SECTION = 0.381966011250105097


def _positive(instance, attribute, value):
    if not value > 0:
        raise ValueError("%s must be positive, got %s" % (attribute.name, value))


def _non_negative(instance, attribute, value):
    if value < 0:
        raise ValueError("%s must not be negative, got %s" % (attribute.name, value))


@attr.s(frozen=True)
class OptimizerConfig:
    max_outer_iters = attr.ib(type=int, default=100, converter=int, validator=_positive)
    f_tol = attr.ib(type=float, default=1e-10, converter=float, validator=_positive)
    line_search_tol = attr.ib(
        type=float, default=1e-8, converter=float, validator=_positive
    )
    n_restarts = attr.ib(type=int, default=2, converter=int, validator=_non_negative)
    init_scale = attr.ib(type=float, default=2.0, converter=float, validator=_positive)
    max_expansions = attr.ib(type=int, default=50, converter=int, validator=_positive)
    max_line_iters = attr.ib(type=int, default=500, converter=int, validator=_positive)
    seed = attr.ib(type=int, default=0, converter=int)

    @classmethod
    def fast(cls, **kwargs) -> "OptimizerConfig":
        """Looser settings used to score rollouts during the search."""
        settings = dict(
            max_outer_iters=20, f_tol=1e-6, line_search_tol=1e-4, n_restarts=1
        )
        settings.update(kwargs)
        return cls(**settings)


def _finite(func: Callable) -> Callable:
    def wrapped(x):
        value = float(func(x))
        if not math.isfinite(value):
            return math.inf
        return value

    return wrapped


def _bracket(
    g: Callable[[float], float], f0: float, step: float, max_expansions: int
) -> Optional[Tuple[float, float, float, float]]:
    """Return (low, best, high, g(best)) enclosing a minimum, or None."""
    a, fa = 0.0, f0
    b, fb = step, g(step)

    if fb >= fa:
        c, fc = -step, g(-step)
        if fc >= fa:
            if fb == fa == fc:
                return None
            return -step, 0.0, step, f0
        b, fb = c, fc

    for _ in range(max_expansions):
        c = b + GOLDEN_GROWTH * (b - a)
        fc = g(c)
        if fc > fb:
            low, high = min(a, c), max(a, c)
            return low, b, high, fb
        a, fa = b, fb
        b, fb = c, fc

    return None


def _brent(
    f: Callable[[float], float],
    a: float,
    b: float,
    x: float,
    fx: float,
    rel_tol: float,
    abs_tol: float = 1e-12,
    max_iter: int = 500,
) -> Tuple[float, float]:
    """Brent's method on [a, b] starting from x, which has the lowest known value."""
    x_sec, fx_sec = x, fx  # second best
    x_trd, fx_trd = x, fx  # third best
    d, e = 0.0, 0.0

    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        tol1 = rel_tol * abs(x) + abs_tol
        tol2 = 2.0 * tol1

        if abs(x - mid) <= tol2 - 0.5 * (b - a):
            break

        if abs(e) > tol1:
            # parabola through the three best points
            tmp1 = (x - x_sec) * (fx - fx_trd)
            denominator = (x - x_trd) * (fx - fx_sec)
            numerator = (x - x_trd) * denominator - (x - x_sec) * tmp1
            denominator = 2.0 * (denominator - tmp1)
            if denominator > 0.0:
                numerator = -numerator
            denominator = abs(denominator)
            tmp1 = e
            e = d

            if (
                abs(numerator) >= abs(0.5 * denominator * tmp1)
                or numerator <= denominator * (a - x)
                or numerator >= denominator * (b - x)
            ):
                e = b - x if x < mid else a - x
                d = GOLDEN_SECTION * e
            else:
                d = numerator / denominator
                x_new = x + d
                if (x_new - a < tol2) or (b - x_new < tol2):
                    d = tol1 if x < mid else -tol1
        else:
            e = b - x if x < mid else a - x
            d = GOLDEN_SECTION * e

        if tol1 <= abs(d):
            x_new = x + d
        elif d > 0.0:
            x_new = x + tol1
        else:
            x_new = x - tol1
        fx_new = f(x_new)

        if fx_new <= fx:
            if x_new >= x:
                a = x
            else:
                b = x
            x_trd, fx_trd = x_sec, fx_sec
            x_sec, fx_sec = x, fx
            x, fx = x_new, fx_new
        else:
            if x_new < x:
                a = x_new
            else:
                b = x_new
            if fx_new <= fx_sec or x_sec == x:
                x_trd, fx_trd = x_sec, fx_sec
                x_sec, fx_sec = x_new, fx_new
            elif fx_new <= fx_trd or x_trd == x or x_trd == x_sec:
                x_trd, fx_trd = x_new, fx_new

    return x, fx


def _line_minimize(
    g: Callable[[float], float],
    f0: float,
    step: float,
    tol: float,
    max_expansions: int,
    max_iter: int,
) -> Tuple[float, float]:
    bracket = _bracket(g, f0, step, max_expansions)
    if bracket is None:
        return 0.0, f0

    low, best, high, f_best = bracket
    alpha, f_alpha = _brent(g, low, high, best, f_best, rel_tol=tol, max_iter=max_iter)
    if not f_alpha <= f0:
        return 0.0, f0
    return alpha, f_alpha


def line_minimize(
    objective: Callable[[float], float],
    step: float = 1.0,
    tol: float = 1e-8,
    *,
    max_expansions: int = 50,
    max_iter: int = 500,
) -> float:
    """Return the step minimizing a one-dimensional function.

    `step` is the initial bracketing step. If no finite bracket is found within
    `max_expansions` golden-ratio expansions, the step 0 is returned.
    """
    g = _finite(objective)
    f0 = g(0.0)
    alpha, _ = _line_minimize(g, f0, step, tol, max_expansions, max_iter)
    return alpha


def powell_minimize(
    objective: Callable[[np.ndarray], float],
    x0,
    cfg: OptimizerConfig = OptimizerConfig(),
) -> Tuple[np.ndarray, float]:
    """Minimize `objective` with Powell's method starting from `x0`.

    Returns the best point and its value, which is never larger than the value at
    the start point.
    """
    x = np.array(x0, dtype=float).ravel()
    n = x.size
    if n == 0:
        raise EmptyProblemError("Nothing to optimize")

    func = _finite(objective)
    fval = func(x)
    if not math.isfinite(fval):
        _LOGGER.debug("Objective is not finite at the start point %s", x)
        return x, fval

    def line_search(point, fpoint, direction):
        def along(alpha):
            return func(point + alpha * direction)

        alpha, f_alpha = _line_minimize(
            along,
            fpoint,
            1.0,
            cfg.line_search_tol,
            cfg.max_expansions,
            cfg.max_line_iters,
        )
        displacement = alpha * direction
        return f_alpha, point + displacement, displacement

    directions = np.eye(n)
    x1 = x.copy()
    for iteration in range(1, cfg.max_outer_iters + 1):
        fx = fval
        biggest = 0
        delta = 0.0
        for i in range(n):
            f_before = fval
            fval, x, _ = line_search(x, fval, directions[i])
            if f_before - fval > delta:
                delta = f_before - fval
                biggest = i

        if 2.0 * (fx - fval) <= cfg.f_tol * (abs(fx) + abs(fval)) + 1e-20:
            _LOGGER.debug("Converged after %s iterations: %s", iteration, fval)
            break

        net_direction = x - x1
        extrapolated = 2.0 * x - x1
        x1 = x.copy()
        f_extrapolated = func(extrapolated)
        if fx > f_extrapolated:
            t = 2.0 * (fx + f_extrapolated - 2.0 * fval)
            temp = fx - fval - delta
            t *= temp * temp
            temp = fx - f_extrapolated
            t -= delta * temp * temp
            if t < 0.0:
                fval, x, displacement = line_search(x, fval, net_direction)
                if np.any(displacement):
                    directions[biggest] = directions[-1]
                    directions[-1] = displacement

    return x, fval


def fit_coefficients(
    tree: ExpressionTree,
    series: TimeSeries,
    cfg: OptimizerConfig = OptimizerConfig(),
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, float]:
    """Fit the coefficients of `tree` by minimizing the total absolute error.

    The first start is all ones, `cfg.n_restarts` further starts are drawn uniformly
    from [-init_scale, init_scale]. Returns the best coefficients and their error.
    """
    n = tree.n_coefficients
    if n == 0:
        return np.empty(0), total_abs_error(series, tree, ())

    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    def objective(coeffs):
        return total_abs_error(series, tree, coeffs)

    starts = [np.ones(n)]
    starts.extend(
        rng.uniform(-cfg.init_scale, cfg.init_scale, size=n)
        for _ in range(cfg.n_restarts)
    )

    best_x, best_f = starts[0], math.inf
    for i, x0 in enumerate(starts):
        x, f = powell_minimize(objective, x0, cfg)
        _LOGGER.debug("Start %s of %s: error %s", i + 1, len(starts), f)
        if f < best_f or i == 0:
            best_x, best_f = x, f

    return best_x, best_f
