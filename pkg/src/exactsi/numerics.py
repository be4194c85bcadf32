"""Stable scalar Gaussian primitives.

Everything downstream reduces to four operations: the standard normal CDF,
truncation probabilities of a univariate Gaussian over an interval (with
infinite endpoints allowed), log-space quadrature of density-times-weight
products, and monotone root finding.  Tail quantities are computed through
``log_ndtr`` (scaled complementary error function under the hood) so that
differences of far-tail CDFs never cancel to zero while the true value is
representable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import log_ndtr, logsumexp, ndtr

from .errors import EmptyMassError, InvalidArgumentError, NoRootError

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Interval:
    """A nonempty open interval of the extended real line.

    Endpoints may be ``-inf``/``+inf`` (IEEE infinities, no sentinels) but
    never NaN, and ``lower < upper`` strictly.
    """

    lower: float
    upper: float

    def __post_init__(self):
        lo, hi = float(self.lower), float(self.upper)
        if math.isnan(lo) or math.isnan(hi):
            raise InvalidArgumentError("interval endpoints must not be NaN")
        if not lo < hi:
            raise InvalidArgumentError(
                f"degenerate interval: lower={lo!r} must be < upper={hi!r}"
            )
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def is_full_line(self) -> bool:
        return math.isinf(self.lower) and math.isinf(self.upper)

    def contains(self, x: float) -> bool:
        return self.lower < x < self.upper


FULL_LINE = Interval(-math.inf, math.inf)


@dataclass(frozen=True)
class QuadratureSpec:
    """Grid extent (in standard deviations) and node count for quadrature."""

    half_width_sigmas: float = 8.5
    n_points: int = 4097

    def __post_init__(self):
        if not self.half_width_sigmas >= 6:
            raise InvalidArgumentError("half_width_sigmas must be >= 6")
        if not self.n_points >= 64:
            raise InvalidArgumentError("n_points must be >= 64")


DEFAULT_QUADRATURE = QuadratureSpec()


def gaussian_cdf(x: float) -> float:
    """Standard normal CDF, exact limits at +/-inf, error on NaN."""
    x = float(x)
    if math.isnan(x):
        raise InvalidArgumentError("gaussian_cdf: NaN input")
    return float(ndtr(x))


def _log1mexp(d):
    """log(1 - exp(d)) for d <= 0, elementwise, without catastrophic loss."""
    d = np.asarray(d, dtype=float)
    out = np.full(d.shape, -np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = d < -math.log(2.0)  # exp(d) < 1/2: log1p is safe
        out = np.where(small, np.log1p(-np.exp(np.minimum(d, 0.0))), out)
        big = (~small) & (d < 0)  # exp(d) close to 1: expm1 keeps precision
        out = np.where(big, np.log(-np.expm1(np.where(big, d, -1.0))), out)
    return out


def log_truncation_prob(interval: Interval, theta, vartheta: float):
    """Log of the probability that N(theta, vartheta^2) falls in ``interval``.

    Vectorized over ``theta``.  Finite (not -inf) whenever the dominant
    endpoint's log-CDF is, which covers means hundreds of standard deviations
    away from the interval.
    """
    if not vartheta > 0:
        raise InvalidArgumentError("vartheta must be positive")
    theta_arr = np.asarray(theta, dtype=float)
    if np.isnan(theta_arr).any():
        raise InvalidArgumentError("log_truncation_prob: NaN theta")
    with np.errstate(invalid="ignore"):
        za = (interval.lower - theta_arr) / vartheta
        zb = (interval.upper - theta_arr) / vartheta
        # Reflect so the dominant endpoint sits in the left tail; `za > -zb`
        # is the overlap-free way to test za + zb > 0 with infinities around.
        flip = za > -zb
        lo_arg = np.where(flip, -zb, za)
        hi_arg = np.where(flip, -za, zb)
    log_hi = log_ndtr(hi_arg)
    log_lo = log_ndtr(lo_arg)
    out = log_hi + _log1mexp(log_lo - log_hi)
    if theta_arr.ndim == 0:
        return float(out)
    return out


def truncation_prob(interval: Interval, theta: float, vartheta: float) -> float:
    """Probability that N(theta, vartheta^2) falls in ``interval``.

    For finite intervals the true value is strictly below 1; when rounding
    saturates, the largest double below 1 is returned instead.
    """
    p = float(np.exp(log_truncation_prob(interval, theta, vartheta)))
    if p >= 1.0 and not interval.is_full_line:
        if math.isfinite(interval.lower) and math.isfinite(interval.upper):
            return math.nextafter(1.0, 0.0)
    return min(p, 1.0)


def integrate_weighted_gaussian(
    mean: float,
    sd: float,
    log_weight: Callable[[np.ndarray], np.ndarray],
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
    upper_limit: float = math.inf,
) -> float:
    """Log of ``int_{-inf}^{upper_limit} phi(x; mean, sd^2) * w(x) dx``.

    ``log_weight`` maps a grid of abscissae to log-weights (``-inf`` allowed
    pointwise).  Composite Simpson weights on an even grid over
    ``[mean - h*sd, min(mean + h*sd, upper_limit)]``, accumulated with
    log-sum-exp; mass beyond the grid is below the documented tolerances.
    Returns ``-inf`` when the upper limit cuts away the whole grid.
    """
    if not sd > 0:
        raise InvalidArgumentError("sd must be positive")
    if math.isnan(mean) or math.isnan(upper_limit):
        raise InvalidArgumentError("integrate_weighted_gaussian: NaN bound")
    lo = mean - spec.half_width_sigmas * sd
    hi = min(mean + spec.half_width_sigmas * sd, upper_limit)
    if not hi > lo:
        return -math.inf
    n = spec.n_points + (spec.n_points % 2 == 0)  # Simpson wants an odd count
    x = np.linspace(lo, hi, n)
    logw = np.asarray(log_weight(x), dtype=float)
    if logw.ndim == 0:
        logw = np.full_like(x, float(logw))
    if np.isnan(logw).any():
        raise InvalidArgumentError("log_weight returned NaN")
    if np.all(np.isneginf(logw)):
        raise EmptyMassError("all grid weights are -inf: integrand carries no mass")
    z = (x - mean) / sd
    logf = -0.5 * z * z - math.log(sd) - _LOG_SQRT_2PI + logw
    simpson = np.full(n, 2.0)
    simpson[1::2] = 4.0
    simpson[0] = simpson[-1] = 1.0
    step = (hi - lo) / (n - 1)
    return float(logsumexp(logf + np.log(simpson * (step / 3.0))))


def invert_monotone(
    g: Callable[[float], float], target: float, seed_bracket: Interval
) -> float:
    """Solve ``g(x) = target`` for continuous monotone ``g``.

    The seed bracket is expanded geometrically (factor 2 per step, at most 60
    steps) toward the side that has not yet straddled the target, then the
    root is isolated by Brent's method to a bracket width of 1e-10.
    """
    a, b = float(seed_bracket.lower), float(seed_bracket.upper)
    if not (math.isfinite(a) and math.isfinite(b)):
        raise InvalidArgumentError("seed bracket must be finite")
    ga, gb = g(a), g(b)
    for _ in range(60):
        if min(ga, gb) <= target <= max(ga, gb):
            break
        width = b - a
        increasing = gb >= ga
        target_above = target > max(ga, gb)
        # For increasing g, values grow to the right; move the deficient side.
        if target_above == increasing:
            b += width
            gb = g(b)
        else:
            a -= width
            ga = g(a)
    else:
        raise NoRootError(
            f"target {target!r} not straddled after 60 bracket expansions"
        )
    if ga == target:
        return a
    if gb == target:
        return b
    sign = 1.0 if gb >= ga else -1.0
    return float(brentq(lambda x: sign * (g(x) - target), a, b, xtol=1e-10))
