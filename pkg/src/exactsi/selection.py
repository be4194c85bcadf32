"""Randomized selection programs and their linear stationarity representations.

Each solver returns the observed selection outcome (selected set, active
solution, signs, inactive subgradient) and can emit the affine identity

    w = P @ stat + Q @ opt + R @ sub + T

satisfied at the solution, together with the constraint pair ``L, M`` such
that ``L @ opt < M`` encodes the selection event.  Rows are permuted
active-first; the permutation is stored on the representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConvergenceError,
    InconsistentOutcomeError,
    InvalidArgumentError,
    InvalidSchemeError,
)

RECONSTRUCTION_TOL = 1e-6


@dataclass
class Dataset:
    """Regression data: response ``y``, fixed design ``X``, optional known noise sd."""

    y: np.ndarray
    X: np.ndarray
    sigma: float | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        if self.y.ndim != 1 or self.X.ndim != 2:
            raise InvalidArgumentError("y must be a vector and X a matrix")
        if self.X.shape[0] != self.y.shape[0]:
            raise InvalidArgumentError("X and y disagree on the sample count")
        if self.n < 2:
            raise InvalidArgumentError("need at least 2 observations")
        if self.p < 1:
            raise InvalidArgumentError("need at least 1 feature")
        if not (np.isfinite(self.y).all() and np.isfinite(self.X).all()):
            raise InvalidArgumentError("data contains NaN or Inf")
        if self.sigma is not None and not self.sigma > 0:
            raise InvalidArgumentError("sigma must be positive when given")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass
class RandomizationScheme:
    """Gaussian randomization covariance: isotropic, carving-calibrated, or explicit.

    ``carving`` uses ``tau2 * X'X``; a diagonal jitter of ``1e-8 * tr(X'X)/p``
    is added only when the Gram matrix is numerically rank deficient, so that
    full-rank closed-form identities stay exact.
    """

    kind: str
    tau2: float = 1.0
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("isotropic", "carving", "explicit"):
            raise InvalidSchemeError(f"unknown randomization kind {self.kind!r}")
        if self.kind == "explicit":
            if self.matrix is None:
                raise InvalidSchemeError("explicit scheme needs a covariance matrix")
            self.matrix = np.asarray(self.matrix, dtype=float)
        if self.tau2 < 0 or (self.tau2 == 0 and self.kind != "isotropic"):
            raise InvalidSchemeError("tau2 must be positive")

    def covariance(self, X: np.ndarray) -> np.ndarray:
        p = X.shape[1]
        if self.kind == "isotropic":
            return self.tau2 * np.eye(p)
        if self.kind == "carving":
            gram = X.T @ X
            if not _is_pd(gram):
                gram = gram + (1e-8 * np.trace(gram) / p) * np.eye(p)
            return self.tau2 * gram
        omega = self.matrix
        if omega.shape != (p, p):
            raise InvalidSchemeError("explicit covariance has the wrong shape")
        if not np.allclose(omega, omega.T, atol=1e-10 * max(1.0, abs(omega).max())):
            raise InvalidSchemeError("explicit covariance must be symmetric")
        omega = 0.5 * (omega + omega.T)
        if not _is_pd(omega):
            raise InvalidSchemeError("explicit covariance must be positive definite")
        return omega


def _is_pd(mat: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(mat)
        return True
    except np.linalg.LinAlgError:
        return False


@dataclass
class SlopeClusters:
    """Cluster structure of a sorted-l1 solution: index sets with one shared magnitude."""

    indices: list[np.ndarray]
    magnitudes: np.ndarray
    dropped_subgradient: np.ndarray


@dataclass
class SelectionOutcome:
    """Observed values at a randomized selection solution."""

    selected: np.ndarray
    active_solution: np.ndarray
    signs: np.ndarray
    inactive_subgradient: np.ndarray
    randomization: np.ndarray
    algorithm: str
    slope_clusters: SlopeClusters | None = None


@dataclass
class LinearEventRep:
    """Affine stationarity identity and selection constraints for one fit.

    ``randomization - (P @ stat + Q @ opt + R @ sub + T)`` vanishes at the
    observed solution and ``L @ opt < M`` holds strictly there.  All row-indexed
    quantities (``P``, ``Q``, ``R``, ``T``, ``randomization``) follow the
    stored active-first permutation ``order`` of the original feature axis.
    """

    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    T: np.ndarray
    L: np.ndarray
    M: np.ndarray
    stat: np.ndarray
    opt: np.ndarray
    sub: np.ndarray
    order: np.ndarray
    randomization: np.ndarray

    def reconstruction_residual(self) -> float:
        fit = self.P @ self.stat + self.Q @ self.opt + self.T
        if self.R.shape[1]:
            fit = fit + self.R @ self.sub
        return float(np.max(np.abs(self.randomization - fit)))

    def constraint_slack(self) -> np.ndarray:
        return self.M - self.L @ self.opt


def _check_rep(rep: LinearEventRep, what: str) -> LinearEventRep:
    resid = rep.reconstruction_residual()
    if resid > RECONSTRUCTION_TOL:
        raise InconsistentOutcomeError(
            f"{what}: stationarity reconstruction residual {resid:.3e}"
        )
    if rep.L.size and not (rep.constraint_slack() > 0).all():
        raise InconsistentOutcomeError(f"{what}: observed solution violates L@opt < M")
    return rep


def sample_randomization(scheme: RandomizationScheme, X: np.ndarray, seed: int) -> np.ndarray:
    """Draw one N(0, Omega) vector; deterministic in ``seed``."""
    omega = scheme.covariance(X)
    p = omega.shape[0]
    z = np.random.default_rng(seed).standard_normal(p)
    if not omega.any():
        return np.zeros(p)
    try:
        chol = np.linalg.cholesky(omega)
    except np.linalg.LinAlgError as exc:
        raise InvalidSchemeError("randomization covariance is not PD") from exc
    return chol @ z


def tau2_from_split(sigma2_hat: float, n: int, n1: int) -> float:
    """Randomization variance matching selection on an ``n1``-subsample."""
    if not 0 < n1 < n:
        raise InvalidArgumentError(f"need 0 < n1 < n, got n1={n1}, n={n}")
    if not sigma2_hat > 0:
        raise InvalidArgumentError("sigma2_hat must be positive")
    return sigma2_hat * (n - n1) / n1


def default_epsilon(data: Dataset) -> float:
    """Ridge default: 0 for tall designs, else a small Gram-scaled value."""
    if data.n > data.p:
        return 0.0
    return 1e-4 * float(np.mean(np.sum(data.X**2, axis=0)))


def _soft(z: float, lam: float) -> float:
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


def solve_randomized_lasso(
    data: Dataset,
    lam: float,
    epsilon: float,
    w: np.ndarray,
    max_sweeps: int = 50_000,
    tol: float = 1e-10,
) -> SelectionOutcome:
    """Solve the linearly-perturbed lasso

        min_b 0.5 ||y - X b||^2 + 0.5 * epsilon ||b||^2 + lam ||b||_1 - w'b

    by cyclic coordinate descent with exact soft-threshold updates, so the
    active set needs no thresholding heuristic.  Full sweeps alternate with
    sweeps restricted to the current support until the maximum coordinate
    change drops below ``tol`` and the stationarity residual is tiny.
    """
    if not lam > 0:
        raise InvalidArgumentError("lam must be positive")
    if epsilon < 0:
        raise InvalidArgumentError("epsilon must be nonnegative")
    w = np.asarray(w, dtype=float)
    if w.shape != (data.p,):
        raise InvalidArgumentError("w has the wrong length")
    X, y, p = data.X, data.y, data.p
    gram = X.T @ X
    diag = np.diag(gram).copy()
    c = X.T @ y + w
    if (diag + epsilon <= 0).any():
        bad = int(np.argmin(diag + epsilon))
        if abs(c[bad]) > lam:
            raise InvalidArgumentError(
                f"column {bad} has zero norm and epsilon=0: objective unbounded"
            )
    b = np.zeros(p)
    s = np.zeros(p)  # s = gram @ b, maintained incrementally

    def sweep(indices) -> float:
        nonlocal s
        change = 0.0
        for j in indices:
            old = b[j]
            denom = diag[j] + epsilon
            if denom <= 0:
                continue
            new = _soft(c[j] - s[j] + diag[j] * old, lam) / denom
            if new != old:
                s = s + gram[:, j] * (new - old)
                b[j] = new
                change = max(change, abs(new - old))
        return change

    def kkt_residual() -> float:
        active = b != 0
        resid = 0.0
        if active.any():
            stat = s[active] - c[active] + epsilon * b[active] + lam * np.sign(b[active])
            resid = float(np.max(np.abs(stat)))
        if (~active).any():
            slack = np.abs(c[~active] - s[~active]) - lam
            resid = max(resid, float(max(np.max(slack), 0.0)))
        return resid

    sweeps = 0
    converged = False
    all_idx = range(p)
    while sweeps < max_sweeps:
        change = sweep(all_idx)
        sweeps += 1
        s = gram @ b  # reset incremental drift at each full pass
        if change <= tol and kkt_residual() <= 1e-9:
            converged = True
            break
        active = np.flatnonzero(b)
        while sweeps < max_sweeps and active.size:
            if sweep(active) <= tol:
                break
            sweeps += 1
    if not converged:
        s = gram @ b
        resid = kkt_residual()
        if resid > 1e-9:
            raise ConvergenceError(
                f"coordinate descent did not converge in {max_sweeps} sweeps",
                residual=resid,
            )

    selected = np.flatnonzero(b)
    inactive = np.setdiff1d(np.arange(p), selected)
    active_sol = b[selected]
    signs = np.sign(active_sol)
    resid_vec = y - X[:, selected] @ active_sol
    sub = (w[inactive] + X[:, inactive].T @ resid_vec) / lam
    return SelectionOutcome(
        selected=selected,
        active_solution=active_sol,
        signs=signs,
        inactive_subgradient=sub,
        randomization=w,
        algorithm="lasso",
    )


def _active_first_order(p: int, selected: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    inactive = np.setdiff1d(np.arange(p), selected)
    return np.concatenate([selected, inactive]).astype(int), inactive


def lasso_event_rep(
    data: Dataset, outcome: SelectionOutcome, lam: float, epsilon: float
) -> LinearEventRep:
    """Stationarity identity of the randomized lasso in (active, inactive) blocks."""
    X, p = data.X, data.p
    E = outcome.selected
    q = E.size
    order, inactive = _active_first_order(p, E)
    XE = X[:, E]
    P = -X[:, order].T
    Q = np.vstack([XE.T @ XE + epsilon * np.eye(q), X[:, inactive].T @ XE])
    R = np.vstack([np.zeros((q, p - q)), lam * np.eye(p - q)])
    T = np.concatenate([lam * outcome.signs, np.zeros(p - q)])
    rep = LinearEventRep(
        P=P,
        Q=Q,
        R=R,
        T=T,
        L=-np.diag(outcome.signs),
        M=np.zeros(q),
        stat=data.y,
        opt=outcome.active_solution,
        sub=outcome.inactive_subgradient,
        order=order,
        randomization=outcome.randomization[order],
    )
    return _check_rep(rep, "lasso event")


def lee_event_rep(
    data: Dataset, outcome: SelectionOutcome, lam: float, epsilon: float
) -> LinearEventRep:
    """Alternate representation conditioning on the selected set and signs only.

    All p optimization variables (active solution stacked over the inactive
    subgradient) stay free, constrained by the sign cone and the unit box.
    """
    X, p = data.X, data.p
    E = outcome.selected
    q = E.size
    order, inactive = _active_first_order(p, E)
    XE = X[:, E]
    Q = np.block(
        [
            [XE.T @ XE + epsilon * np.eye(q), np.zeros((q, p - q))],
            [X[:, inactive].T @ XE, lam * np.eye(p - q)],
        ]
    )
    T = np.concatenate([lam * outcome.signs, np.zeros(p - q)])
    L = np.vstack(
        [
            np.hstack([-np.diag(outcome.signs), np.zeros((q, p - q))]),
            np.hstack([np.zeros((p - q, q)), np.eye(p - q)]),
            np.hstack([np.zeros((p - q, q)), -np.eye(p - q)]),
        ]
    )
    M = np.concatenate([np.zeros(q), np.ones(2 * (p - q))])
    rep = LinearEventRep(
        P=-X[:, order].T,
        Q=Q,
        R=np.zeros((p, 0)),
        T=T,
        L=L,
        M=M,
        stat=data.y,
        opt=np.concatenate([outcome.active_solution, outcome.inactive_subgradient]),
        sub=np.zeros(0),
        order=order,
        randomization=outcome.randomization[order],
    )
    return _check_rep(rep, "sign-event")


def solve_randomized_screening(
    data: Dataset, threshold: float, w: np.ndarray
) -> tuple[SelectionOutcome, LinearEventRep]:
    """Randomized marginal screening: keep features with |X_j'y + w_j| > threshold.

    The active variables are the boundary offsets ``|X_j'y + w_j| - threshold``
    carrying the observed signs; the inactive statistic keeps its sign so the
    stationarity identity reconstructs exactly.
    """
    if not threshold > 0:
        raise InvalidArgumentError("threshold must be positive")
    w = np.asarray(w, dtype=float)
    if w.shape != (data.p,):
        raise InvalidArgumentError("w has the wrong length")
    v = data.X.T @ data.y + w
    selected = np.flatnonzero(np.abs(v) > threshold)
    q = selected.size
    signs = np.sign(v[selected])
    opt = v[selected] - threshold * signs
    order, inactive = _active_first_order(data.p, selected)
    sub = v[inactive]
    outcome = SelectionOutcome(
        selected=selected,
        active_solution=opt,
        signs=signs,
        inactive_subgradient=sub,
        randomization=w,
        algorithm="screening",
    )
    rep = LinearEventRep(
        P=-data.X[:, order].T,
        Q=np.vstack([np.eye(q), np.zeros((data.p - q, q))]),
        R=np.vstack([np.zeros((q, data.p - q)), np.eye(data.p - q)]),
        T=np.concatenate([threshold * signs, np.zeros(data.p - q)]),
        L=-np.diag(signs),
        M=np.zeros(q),
        stat=data.y,
        opt=opt,
        sub=sub,
        order=order,
        randomization=w[order],
    )
    return outcome, _check_rep(rep, "screening event")


def prox_sorted_l1(v: np.ndarray, lams: np.ndarray) -> np.ndarray:
    """Prox of the sorted-l1 penalty via the stack-based nonincreasing projection."""
    v = np.asarray(v, dtype=float)
    lams = np.asarray(lams, dtype=float)
    signs = np.sign(v)
    mags = np.abs(v)
    order = np.argsort(-mags, kind="stable")
    z = mags[order] - lams
    vals: list[float] = []
    counts: list[int] = []
    for zi in z:
        cur_v, cur_c = float(zi), 1
        while vals and vals[-1] <= cur_v:
            pv, pc = vals.pop(), counts.pop()
            cur_v = (pv * pc + cur_v * cur_c) / (pc + cur_c)
            cur_c += pc
        vals.append(cur_v)
        counts.append(cur_c)
    x = np.repeat(vals, counts)
    np.maximum(x, 0.0, out=x)
    out = np.empty_like(x)
    out[order] = x
    return signs * out


def solve_randomized_slope(
    data: Dataset,
    lambdas: np.ndarray,
    w: np.ndarray,
    max_iters: int = 50_000,
    tol: float = 1e-10,
    cluster_rtol: float = 1e-8,
) -> tuple[SelectionOutcome, LinearEventRep]:
    """Solve the linearly-perturbed sorted-l1 regression

        min_b 0.5 ||y - X b||^2 + sum_j lambdas_j |b|_(j) - w'b

    by accelerated proximal gradient with fixed step 1/||X'X||_2, stopping on
    the prox fixed-point residual.  Nonzero magnitudes are grouped into
    clusters with relative tolerance ``cluster_rtol``; one subgradient entry
    per cluster (its smallest) moves into the constant of the stationarity
    identity, the rest stay free.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    w = np.asarray(w, dtype=float)
    p = data.p
    if lambdas.shape != (p,):
        raise InvalidArgumentError("need one tuning value per feature")
    if not (np.diff(lambdas) < 0).all() or not (lambdas > 0).all():
        raise InvalidArgumentError("tuning values must be strictly decreasing and positive")
    if w.shape != (p,):
        raise InvalidArgumentError("w has the wrong length")
    X, y = data.X, data.y
    gram = X.T @ X
    lip = float(np.linalg.eigvalsh(gram)[-1])
    if lip <= 0:
        raise InvalidArgumentError("design has no signal direction")
    step = 1.0 / lip
    c = X.T @ y + w

    def grad(vec):
        return gram @ vec - c

    def fix_point_resid(vec) -> float:
        return float(np.max(np.abs(vec - prox_sorted_l1(vec - step * grad(vec), step * lambdas))))

    b = np.zeros(p)
    z = b.copy()
    t_acc = 1.0
    converged = False
    for _ in range(max_iters):
        b_new = prox_sorted_l1(z - step * grad(z), step * lambdas)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_acc * t_acc))
        z = b_new + ((t_acc - 1.0) / t_new) * (b_new - b)
        b, t_acc = b_new, t_new
        if fix_point_resid(b) <= tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"proximal gradient did not converge in {max_iters} iterations",
            residual=fix_point_resid(b),
        )

    selected = np.flatnonzero(b)
    signs_full = np.sign(b)
    mags = np.abs(b)
    # group distinct nonzero magnitudes, largest first
    sel_sorted = selected[np.argsort(-mags[selected], kind="stable")]
    clusters: list[list[int]] = []
    cluster_mags: list[float] = []
    for j in sel_sorted:
        m = mags[j]
        if clusters and cluster_mags[-1] - m <= cluster_rtol * cluster_mags[-1]:
            clusters[-1].append(int(j))
        else:
            clusters.append([int(j)])
            cluster_mags.append(float(m))
    q = len(clusters)
    O = np.array([float(np.mean(mags[idx])) for idx in clusters])
    cluster_idx = [np.sort(np.array(idx, dtype=int)) for idx in clusters]

    X0 = np.column_stack(
        [X[:, idx] @ signs_full[idx] for idx in cluster_idx]
    ) if q else np.zeros((data.n, 0))
    g = w + X.T @ (y - X0 @ O) if q else w + X.T @ y

    dropped_rows = []
    free_rows = []
    dropped_vals = []
    for idx in cluster_idx:
        vals = g[idx]
        k = int(np.argmin(vals))
        dropped_rows.append(int(idx[k]))
        dropped_vals.append(float(vals[k]))
        free_rows.extend(int(j) for j in idx if j != idx[k])
    unselected = np.setdiff1d(np.arange(p), selected)
    free_rows.extend(int(j) for j in unselected)
    order = np.array(dropped_rows + free_rows, dtype=int)

    S_prime = np.array(dropped_vals)
    U = g[np.array(free_rows, dtype=int)] if free_rows else np.zeros(0)
    L = np.zeros((q, q))
    for i in range(q - 1):
        L[i, i] = -1.0
        L[i, i + 1] = 1.0
    if q:
        L[q - 1, q - 1] = -1.0
    rep = LinearEventRep(
        P=-X[:, order].T,
        Q=X[:, order].T @ X0,
        R=np.vstack([np.zeros((q, p - q)), np.eye(p - q)]),
        T=np.concatenate([S_prime, np.zeros(p - q)]),
        L=L,
        M=np.zeros(q),
        stat=y,
        opt=O,
        sub=U,
        order=order,
        randomization=w[order],
    )
    outcome = SelectionOutcome(
        selected=selected,
        active_solution=O,
        signs=signs_full[selected],
        inactive_subgradient=U,
        randomization=w,
        algorithm="slope",
        slope_clusters=SlopeClusters(
            indices=cluster_idx, magnitudes=O, dropped_subgradient=S_prime
        ),
    )
    return outcome, _check_rep(rep, "sorted-l1 event")


def bootstrap_reporting_problem(
    beta_hat: np.ndarray, Sigma: np.ndarray, beta_boot: np.ndarray, alpha: float
) -> tuple[Dataset, RandomizationScheme, np.ndarray]:
    """Rewrite selective reporting from a bootstrap draw as a randomized lasso.

    Whitening by the estimator covariance turns the penalized reporting
    problem into a lasso on ``y = Sigma^{-1/2} beta_hat, X = Sigma^{-1/2}``
    with randomization ``alpha * Sigma^{-1} (beta_boot - beta_hat)`` whose
    covariance is ``alpha^2 * Sigma^{-1}``.
    """
    beta_hat = np.asarray(beta_hat, dtype=float)
    beta_boot = np.asarray(beta_boot, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    if not alpha > 0:
        raise InvalidArgumentError("alpha must be positive")
    if Sigma.ndim != 2 or Sigma.shape[0] != Sigma.shape[1]:
        raise InvalidArgumentError("Sigma must be square")
    if not np.allclose(Sigma, Sigma.T, atol=1e-10 * max(1.0, abs(Sigma).max())):
        raise InvalidArgumentError("Sigma must be symmetric")
    eigval, eigvec = np.linalg.eigh(0.5 * (Sigma + Sigma.T))
    if eigval.min() <= 1e-12 * max(eigval.max(), 1.0):
        raise InvalidArgumentError("Sigma must be positive definite")
    inv_half = (eigvec / np.sqrt(eigval)) @ eigvec.T
    inv_full = (eigvec / eigval) @ eigvec.T
    data = Dataset(y=inv_half @ beta_hat, X=inv_half, sigma=1.0)
    w = alpha * inv_full @ (beta_boot - beta_hat)
    scheme = RandomizationScheme(kind="explicit", tau2=1.0, matrix=alpha**2 * inv_full)
    return data, scheme, w
