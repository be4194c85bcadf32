"""Exact randomized-selection pivot, interval inversion, and baselines.

The pivot is the CDF of a bivariate truncated Gaussian reduced to a ratio of
one-dimensional integrals: a Gaussian density in the target estimate times
the probability that the conditioned solution combination stays in its
truncation interval, integrated up to the observed estimate and normalized by
the full-line integral.  Baselines: the polyhedral (non-randomized) truncated
Gaussian pivot, data splitting, and response-splitting with synthetic noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import ndtri

from .conditioning import ConditioningGeometry, TargetSpec, theta_and_direction
from .errors import (
    GeometryInconsistencyError,
    InvalidArgumentError,
    NumericalDegeneracyError,
    SingularDesignError,
)
from .numerics import (
    DEFAULT_QUADRATURE,
    EmptyMassError,
    Interval,
    QuadratureSpec,
    integrate_weighted_gaussian,
    invert_monotone,
    log_truncation_prob,
)
from .selection import Dataset, LinearEventRep, SelectionOutcome, solve_randomized_lasso

POLYHEDRAL_CLIP_SDS = 50.0


@dataclass(frozen=True)
class PivotParams:
    """Constants of the exact pivot for one target coordinate.

    The weight mean is the affine map ``theta_intercept + theta_slope * x``
    with ``theta_slope = -vartheta2``; the estimate's density has mean
    ``lambda_j * beta0 + zeta_j`` and standard deviation ``sqrt(sigma_j2)``.
    """

    vartheta2: float
    sigma_j2: float
    lambda_j: float
    zeta_j: float
    theta_intercept: float
    theta_slope: float
    interval: Interval
    beta_hat_j: float

    def __post_init__(self):
        if not self.sigma_j2 > 0:
            raise NumericalDegeneracyError("sigma_j2 must be positive")
        if self.theta_slope != -self.vartheta2:
            raise InvalidArgumentError("theta_slope must equal -vartheta2")


@dataclass(frozen=True)
class IntervalEstimate:
    """A two-sided confidence interval for one selected coordinate."""

    lower: float
    upper: float
    level: float
    target_label: int
    method: str
    clipped: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise InvalidArgumentError("interval endpoints out of order")

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def lambda_delta(
    v: np.ndarray,
    U: np.ndarray,
    rep: LinearEventRep,
    Omega: np.ndarray,
    geom: ConditioningGeometry,
) -> tuple[float, np.ndarray]:
    """Affine pieces of the conditional mean of the free block.

    ``core = P v + R U + T``; returns ``(-Pj' Omega^{-1} core,
    -Theta Q' Omega^{-1} core)``.
    """
    omega = Omega[np.ix_(rep.order, rep.order)]
    core = rep.P @ v + rep.T
    if rep.R.shape[1]:
        core = core + rep.R @ U
    omega_inv_core = cho_solve(cho_factor(0.5 * (omega + omega.T)), core)
    lam = -float(geom.Pj @ omega_inv_core)
    delta = -(geom.Theta @ (rep.Q.T @ omega_inv_core))
    return lam, delta


def pivot_params(
    data: Dataset,
    rep: LinearEventRep,
    Omega: np.ndarray,
    geom: ConditioningGeometry,
    target: TargetSpec,
    sigma: float,
    U: np.ndarray | None = None,
) -> PivotParams:
    """Assemble the pivot constants for one target from a fitted representation."""
    if not sigma > 0:
        raise InvalidArgumentError("sigma must be positive")
    if U is None:
        U = rep.sub
    c = target.contrast
    beta_hat = float(c @ data.y)
    gamma = data.y - c * (beta_hat / target.norm2)
    lam_val, delta = lambda_delta(gamma, U, rep, Omega, geom)
    r_delta = float(geom.rj @ delta)
    vartheta2 = float(geom.rj @ geom.Theta @ geom.rj)
    omega = Omega[np.ix_(rep.order, rep.order)]
    pj_quad = float(geom.Pj @ cho_solve(cho_factor(0.5 * (omega + omega.T)), geom.Pj))
    inv_s2 = 1.0 / (sigma**2 * target.norm2) + pj_quad - vartheta2
    if not inv_s2 > 0:
        raise NumericalDegeneracyError(
            f"nonpositive precision {inv_s2:.3e}: randomization solves lost accuracy"
        )
    sigma_j2 = 1.0 / inv_s2
    lambda_j = sigma_j2 / (sigma**2 * target.norm2)
    zeta_j = sigma_j2 * (lam_val - r_delta)
    return PivotParams(
        vartheta2=vartheta2,
        sigma_j2=sigma_j2,
        lambda_j=lambda_j,
        zeta_j=zeta_j,
        theta_intercept=r_delta,
        theta_slope=-vartheta2,
        interval=geom.interval,
        beta_hat_j=beta_hat,
    )


def carving_pivot_params(
    data: Dataset,
    outcome: SelectionOutcome,
    target: TargetSpec,
    sigma: float,
    tau2: float,
    lam: float,
) -> PivotParams:
    """Closed-form pivot constants for the carving covariance with no ridge.

    Independent of the generic route: no randomization-covariance solves, only
    the selected-design Gram.  Used to cross-check the generic constants.
    """
    E = outcome.selected
    XE = data.X[:, E]
    q = E.size
    gram = XE.T @ XE
    factor = cho_factor(gram)
    gram_inv = cho_solve(factor, np.eye(q))
    j = target.j
    norm2 = target.norm2
    vartheta2 = 1.0 / (tau2 * norm2)
    sigma_j2 = sigma**2 * norm2
    theta_intercept = float(lam * (gram_inv @ outcome.signs)[j] / (tau2 * norm2))

    # interval on rj'O with rj = -e_j/(tau2*norm2), Theta = tau2 * gram_inv
    O = outcome.active_solution
    qj = -tau2 * gram_inv[:, j]
    r_obs = -O[j] / (tau2 * norm2)
    A = O - qj * r_obs
    lower, upper = -math.inf, math.inf
    for k in range(q):
        coef = -outcome.signs[k] * qj[k]
        bound = outcome.signs[k] * A[k] / coef if coef != 0 else math.nan
        if coef > 0:
            upper = min(upper, bound)
        elif coef < 0:
            lower = max(lower, bound)
        elif -outcome.signs[k] * A[k] >= 0:
            raise GeometryInconsistencyError("sign constraint violated off-direction")
    interval = Interval(lower, upper)
    if not interval.contains(r_obs):
        raise GeometryInconsistencyError("observed combination outside closed-form interval")
    return PivotParams(
        vartheta2=vartheta2,
        sigma_j2=sigma_j2,
        lambda_j=1.0,
        zeta_j=0.0,
        theta_intercept=theta_intercept,
        theta_slope=-vartheta2,
        interval=interval,
        beta_hat_j=float(target.contrast @ data.y),
    )


def exact_pivot(
    params: PivotParams, beta0: float, quad: QuadratureSpec = DEFAULT_QUADRATURE
) -> float:
    """Value of the exact pivot at the hypothesized target value ``beta0``."""
    if not math.isfinite(beta0):
        raise InvalidArgumentError("beta0 must be finite")
    sd = math.sqrt(params.sigma_j2)
    vartheta = math.sqrt(params.vartheta2)
    mean = params.lambda_j * beta0 + params.zeta_j

    def log_weight(x):
        return log_truncation_prob(
            params.interval, params.theta_intercept + params.theta_slope * x, vartheta
        )

    try:
        log_den = integrate_weighted_gaussian(mean, sd, log_weight, quad)
    except EmptyMassError as exc:
        raise NumericalDegeneracyError(
            f"pivot denominator has no mass at beta0={beta0!r} "
            f"(interval {params.interval}, mean {mean!r})"
        ) from exc
    if log_den == -math.inf:
        raise NumericalDegeneracyError("pivot denominator underflowed")
    log_num = integrate_weighted_gaussian(
        mean, sd, log_weight, quad, upper_limit=params.beta_hat_j
    )
    return float(min(max(math.exp(log_num - log_den), 0.0), 1.0))


def invert_pivot(
    params: PivotParams,
    alpha: float,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
    target_label: int = -1,
) -> IntervalEstimate:
    """Level ``1 - alpha`` interval from the strictly decreasing pivot."""
    if not 0 < alpha < 1:
        raise InvalidArgumentError("alpha must be in (0, 1)")
    half = 5.0 * math.sqrt(params.sigma_j2) / params.lambda_j
    bracket = Interval(params.beta_hat_j - half, params.beta_hat_j + half)

    def pivot_at(b):
        return exact_pivot(params, b, quad)

    lower = invert_monotone(pivot_at, 1.0 - alpha / 2.0, bracket)
    upper = invert_monotone(pivot_at, alpha / 2.0, bracket)
    return IntervalEstimate(
        lower=lower,
        upper=upper,
        level=1.0 - alpha,
        target_label=target_label,
        method="exact",
    )


def _polyhedral_bounds(
    data: Dataset,
    E0: np.ndarray,
    S0: np.ndarray,
    target: TargetSpec,
    lam: float,
    include_inactive: bool = True,
) -> tuple[float, float, float]:
    """One-dimensional truncation bounds of the lasso selection event.

    The event {selected set, signs} is affine in the response; at fixed
    residual off the target contrast it becomes an interval for the estimate.
    ``include_inactive`` keeps the inactive subgradient box constraints, which
    is what makes the conditional law exactly the truncated Gaussian; dropping
    them conditions on a strictly larger event.
    """
    X, y = data.X, data.y
    E0 = np.asarray(E0, dtype=int)
    S0 = np.asarray(S0, dtype=float)
    XE = X[:, E0]
    gram = XE.T @ XE
    try:
        factor = cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError("selected design is rank deficient") from exc
    M1 = cho_solve(factor, XE.T)  # |E| x n
    ginv_s = cho_solve(factor, S0)
    rows = [-(S0[:, None] * M1)]
    rhs = [-lam * S0 * ginv_s]
    if include_inactive:
        inactive = np.setdiff1d(np.arange(data.p), E0)
        if inactive.size:
            Xi = X[:, inactive]
            cross = Xi.T @ XE
            proj_rows = (Xi.T - cross @ M1) / lam
            base = cross @ ginv_s
            rows.extend([proj_rows, -proj_rows])
            rhs.extend([1.0 - base, 1.0 + base])
    G = np.vstack(rows)
    h = np.concatenate(rhs)

    direction = target.contrast / target.norm2
    beta_hat = float(target.contrast @ y)
    gamma = y - target.contrast * (beta_hat / target.norm2)
    coefs = G @ direction
    slack = h - G @ gamma
    scale = 1e-12 * np.linalg.norm(G, axis=1) * np.linalg.norm(direction)
    zero = np.abs(coefs) <= scale
    if (slack[zero] <= 0).any():
        raise GeometryInconsistencyError("off-direction selection constraint violated")
    with np.errstate(divide="ignore"):
        bounds = np.where(zero, np.nan, slack / np.where(zero, 1.0, coefs))
    neg = (~zero) & (coefs < 0)
    pos = (~zero) & (coefs > 0)
    lower = float(np.max(bounds[neg])) if neg.any() else -math.inf
    upper = float(np.min(bounds[pos])) if pos.any() else math.inf
    width_scale = 1e-8 * max(1.0, abs(beta_hat))
    if not lower - width_scale <= beta_hat <= upper + width_scale:
        raise GeometryInconsistencyError(
            f"observed estimate {beta_hat} outside its selection interval "
            f"[{lower}, {upper}]"
        )
    return lower, upper, beta_hat


def polyhedral_pivot(
    data: Dataset,
    E0: np.ndarray,
    S0: np.ndarray,
    target: TargetSpec,
    sigma: float,
    lam: float,
    beta0: float,
    include_inactive: bool = True,
) -> float:
    """Truncated-Gaussian CDF pivot of the non-randomized lasso event."""
    lower, upper, beta_hat = _polyhedral_bounds(
        data, E0, S0, target, lam, include_inactive
    )
    sd = sigma * math.sqrt(target.norm2)
    if beta_hat <= lower:
        return 0.0
    if beta_hat >= upper:
        return 1.0
    log_num = log_truncation_prob(Interval(lower, beta_hat), beta0, sd)
    log_den = log_truncation_prob(Interval(lower, upper), beta0, sd)
    if log_den == -math.inf:
        raise NumericalDegeneracyError("selection event has no mass at this beta0")
    return float(min(max(math.exp(log_num - log_den), 0.0), 1.0))


def polyhedral_interval(
    data: Dataset,
    E0: np.ndarray,
    S0: np.ndarray,
    target: TargetSpec,
    sigma: float,
    lam: float,
    alpha: float,
    target_label: int = -1,
    include_inactive: bool = True,
) -> IntervalEstimate:
    """Invert the polyhedral pivot; huge endpoints are clipped and flagged.

    Truncated-Gaussian intervals can be effectively infinite; endpoints are
    clipped at ``beta_hat +- 50 sd`` and the estimate flagged when that
    happens.
    """
    if not 0 < alpha < 1:
        raise InvalidArgumentError("alpha must be in (0, 1)")
    lower_b, upper_b, beta_hat = _polyhedral_bounds(
        data, E0, S0, target, lam, include_inactive
    )
    sd = sigma * math.sqrt(target.norm2)

    def pivot_at(b):
        if beta_hat <= lower_b:
            return 0.0
        log_num = log_truncation_prob(Interval(lower_b, beta_hat), b, sd)
        log_den = log_truncation_prob(Interval(lower_b, upper_b), b, sd)
        if log_den == -math.inf:
            return 0.0 if b > beta_hat else 1.0
        return float(min(max(math.exp(log_num - log_den), 0.0), 1.0))

    clip_lo = beta_hat - POLYHEDRAL_CLIP_SDS * sd
    clip_hi = beta_hat + POLYHEDRAL_CLIP_SDS * sd
    clipped = False
    if pivot_at(clip_lo) < 1.0 - alpha / 2.0:
        lower = clip_lo
        clipped = True
    else:
        lower = invert_monotone(
            pivot_at, 1.0 - alpha / 2.0, Interval(clip_lo, beta_hat)
        )
    if pivot_at(clip_hi) > alpha / 2.0:
        upper = clip_hi
        clipped = True
    else:
        upper = invert_monotone(pivot_at, alpha / 2.0, Interval(beta_hat, clip_hi))
    return IntervalEstimate(
        lower=lower,
        upper=upper,
        level=1.0 - alpha,
        target_label=target_label,
        method="polyhedral",
        clipped=clipped,
    )


def plug_in_sigma2(data: Dataset, E: np.ndarray, model: str) -> float:
    """Residual-based noise variance: all columns (full) or the selected ones."""
    y, X, n = data.y, data.X, data.n
    if model == "full":
        cols = np.arange(data.p)
    elif model == "selected":
        cols = np.asarray(E, dtype=int)
    else:
        raise InvalidArgumentError(f"unknown model {model!r}")
    df = n - cols.size
    if df < 1:
        raise SingularDesignError("no residual degrees of freedom for the plug-in")
    if cols.size == 0:
        return float(y @ y / df)
    Xc = X[:, cols]
    try:
        coef = cho_solve(cho_factor(Xc.T @ Xc), Xc.T @ y)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError("plug-in design is rank deficient") from exc
    resid = y - Xc @ coef
    return float(resid @ resid / df)


def _ls_z_intervals(
    y: np.ndarray,
    X: np.ndarray,
    E: np.ndarray,
    var_scale: float,
    alpha: float,
    method: str,
    sigma2: float | None = None,
) -> list[IntervalEstimate]:
    """Least-squares z-intervals for the coordinates of a selected design.

    ``sigma2`` of the response noise is estimated from the fit residuals when
    not supplied; ``var_scale`` multiplies the per-coordinate variance.
    """
    E = np.asarray(E, dtype=int)
    if E.size == 0:
        return []
    XE = X[:, E]
    n = y.shape[0]
    if n < E.size + 1:
        raise SingularDesignError("held-out sample too small for the selected set")
    try:
        factor = cho_factor(XE.T @ XE)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError("held-out design is rank deficient") from exc
    coef = cho_solve(factor, XE.T @ y)
    if sigma2 is None:
        resid = y - XE @ coef
        sigma2 = float(resid @ resid / (n - E.size))
    diag = np.diag(cho_solve(factor, np.eye(E.size)))
    z = float(ndtri(1.0 - alpha / 2.0))
    out = []
    for k, jcol in enumerate(E):
        half = z * math.sqrt(var_scale * sigma2 * diag[k])
        out.append(
            IntervalEstimate(
                lower=float(coef[k] - half),
                upper=float(coef[k] + half),
                level=1.0 - alpha,
                target_label=int(jcol),
                method=method,
            )
        )
    return out


def split_inference(
    data: Dataset,
    rho: float,
    lam: float,
    alpha: float,
    model: str,
    seed: int,
) -> list[IntervalEstimate]:
    """Data splitting: lasso on a random ``round(rho * n)`` subsample, then
    z-intervals from least squares on the held-out rows with a held-out
    plug-in noise estimate."""
    if not 0 < rho < 1:
        raise InvalidArgumentError("rho must be in (0, 1)")
    n = data.n
    n1 = int(round(rho * n))
    if not 2 <= n1 <= n - 2:
        raise InvalidArgumentError(f"split size n1={n1} leaves no usable half")
    perm = np.random.default_rng(seed).permutation(n)
    train, test = perm[:n1], perm[n1:]
    train_data = Dataset(y=data.y[train], X=data.X[train], sigma=data.sigma)
    out = solve_randomized_lasso(train_data, lam=lam, epsilon=0.0, w=np.zeros(data.p))
    E = out.selected
    if E.size == 0:
        return []
    if test.size < E.size + 1:
        raise SingularDesignError("held-out half smaller than the selected set")
    return _ls_z_intervals(
        data.y[test], data.X[test], E, var_scale=1.0, alpha=alpha, method="split"
    )


def uv_inference(
    data: Dataset,
    f: float,
    lam: float,
    alpha: float,
    model: str,
    seed: int,
) -> list[IntervalEstimate]:
    """Response splitting: select on ``y + w`` with ``w ~ N(0, sigma^2 f I)``,
    infer from the independent ``y - w/f`` whose noise variance is
    ``sigma^2 (1 + 1/f)``."""
    if not f > 0:
        raise InvalidArgumentError("f must be positive")
    sigma2 = data.sigma**2 if data.sigma is not None else plug_in_sigma2(
        data, np.arange(data.p), model if model == "full" else "full"
    )
    w = np.random.default_rng(seed).standard_normal(data.n) * math.sqrt(sigma2 * f)
    u_data = Dataset(y=data.y + w, X=data.X)
    out = solve_randomized_lasso(u_data, lam=lam, epsilon=0.0, w=np.zeros(data.p))
    E = out.selected
    if E.size == 0:
        return []
    v = data.y - w / f
    return _ls_z_intervals(
        v,
        data.X,
        E,
        var_scale=1.0 + 1.0 / f,
        alpha=alpha,
        method="uv",
        sigma2=sigma2,
    )
