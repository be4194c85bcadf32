"""Monte-Carlo study harness.

Generates sparse Gaussian regressions on an AR(1)-correlated design, runs the
exact randomized method next to the polyhedral, data-splitting, and
response-splitting baselines, and aggregates false-coverage rates, interval
lengths, and selection F1 scores with Monte-Carlo standard errors.  Replicate
randomness derives from (master seed, replicate index), so worker scheduling
cannot change results.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import kstest

from .conditioning import build_geometry, build_target
from .errors import ExactSIError, InsufficientSampleError, InvalidArgumentError
from .inference import (
    IntervalEstimate,
    exact_pivot,
    invert_pivot,
    pivot_params,
    plug_in_sigma2,
    polyhedral_interval,
    polyhedral_pivot,
    split_inference,
    uv_inference,
)
from .selection import (
    Dataset,
    RandomizationScheme,
    lasso_event_rep,
    sample_randomization,
    solve_randomized_lasso,
    tau2_from_split,
)

KNOWN_METHODS = ("exact", "polyhedral", "split", "uv")

CSV_COLUMNS = (
    "rep",
    "method",
    "coordinate",
    "lower",
    "upper",
    "truth",
    "covered",
    "length",
    "f1",
    "selected_size",
)


@dataclass(frozen=True)
class SimConfig:
    """One study cell: data-generation settings, methods, and scale."""

    n: int = 300
    p: int = 100
    sparsity: int = 5
    signal_fraction: float = 0.75
    rho: float = 0.8
    corr: float = 0.9
    sigma2: float = 3.0
    n_reps: int = 300
    methods: tuple[str, ...] = ("exact",)
    model: str = "selected"
    lambda_rule: float | str = "theory"
    seed: int = 0
    alpha: float = 0.1

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise InvalidArgumentError("rho must lie in (0, 1)")
        if self.n_reps < 1:
            raise InvalidArgumentError("n_reps must be at least 1")
        if not 0 <= self.sparsity <= self.p:
            raise InvalidArgumentError("sparsity must lie in [0, p]")
        if not abs(self.corr) < 1:
            raise InvalidArgumentError("corr must lie in (-1, 1)")
        if self.model not in ("full", "selected"):
            raise InvalidArgumentError(f"unknown model {self.model!r}")
        if not 0 < self.alpha < 1:
            raise InvalidArgumentError("alpha must lie in (0, 1)")
        bad = set(self.methods) - set(KNOWN_METHODS)
        if bad:
            raise InvalidArgumentError(f"unknown methods {sorted(bad)}")
        object.__setattr__(self, "methods", tuple(self.methods))


@dataclass
class MethodSummary:
    """Aggregates for one method across replicates."""

    method: str
    n_reps: int
    n_used: int
    n_empty: int
    n_failed: int
    coverage: float
    coverage_se: float
    length: float
    length_se: float
    f1: float
    f1_se: float
    clipped_rate: float


@dataclass
class StudySummary:
    """Study output: per-method aggregates plus the raw per-coordinate rows."""

    config: SimConfig
    methods: dict[str, MethodSummary]
    rows: list[dict] = field(repr=False, default_factory=list)


@dataclass(frozen=True)
class UniformityReport:
    method: str
    statistic: float
    p_value: float
    n_pooled: int


def _seed_for(master: int, rep: int, stream: int) -> int:
    return int(np.random.SeedSequence([master, rep, stream]).generate_state(1)[0])


def generate_design(n: int, p: int, corr: float, seed: int) -> np.ndarray:
    """Rows i.i.d. N(0, Sigma) with Sigma_ij = corr^|i-j|, via the AR recursion."""
    if not abs(corr) < 1:
        raise InvalidArgumentError("corr must lie in (-1, 1)")
    z = np.random.default_rng(seed).standard_normal((n, p))
    X = np.empty_like(z)
    X[:, 0] = z[:, 0]
    scale = math.sqrt(1.0 - corr * corr)
    for j in range(1, p):
        X[:, j] = corr * X[:, j - 1] + scale * z[:, j]
    return X


def support_indices(p: int, sparsity: int) -> np.ndarray:
    """Evenly spread signal support; falls back to a prefix on collisions."""
    if sparsity == 0:
        return np.zeros(0, dtype=int)
    idx = np.unique(np.round(np.linspace(0, p - 1, sparsity)).astype(int))
    if idx.size != sparsity:
        idx = np.arange(sparsity)
    return idx


def generate_response(
    X: np.ndarray, support: np.ndarray, f: float, sigma2: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Sparse mean plus Gaussian noise: nonzero signals all sqrt(2 f log p)."""
    n, p = X.shape
    beta = np.zeros(p)
    if support.size:
        beta[support] = math.sqrt(2.0 * f * math.log(p))
    noise = np.random.default_rng(seed).standard_normal(n) * math.sqrt(sigma2)
    return X @ beta + noise, beta


def f1_score(E, E_star) -> float:
    """Selection accuracy: TP / (TP + (FP + FN) / 2); two empty sets score 1."""
    E, E_star = set(map(int, E)), set(map(int, E_star))
    tp = len(E & E_star)
    fp = len(E - E_star)
    fn = len(E_star - E)
    if tp == fp == fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def fcr(intervals: list[IntervalEstimate], true_targets) -> float:
    """Fraction of selected coordinates whose interval misses its target."""
    true_targets = np.asarray(true_targets, dtype=float)
    if len(intervals) != true_targets.size:
        raise InvalidArgumentError("intervals and targets have mismatched lengths")
    if not intervals:
        return 0.0
    misses = sum(
        0 if est.covers(float(t)) else 1 for est, t in zip(intervals, true_targets)
    )
    return misses / max(len(intervals), 1)


def true_projected_target(
    X: np.ndarray, E, E_star, beta_star: np.ndarray, model: str
) -> np.ndarray:
    """Per-coordinate estimands of the selected set under the chosen model."""
    E = np.asarray(E, dtype=int)
    beta_star = np.asarray(beta_star, dtype=float)
    if model == "full":
        return beta_star[E]
    if model != "selected":
        raise InvalidArgumentError(f"unknown model {model!r}")
    if E.size == 0:
        return np.zeros(0)
    XE = X[:, E]
    mean = X @ beta_star
    try:
        return np.linalg.solve(XE.T @ XE, XE.T @ mean)
    except np.linalg.LinAlgError as exc:
        from .errors import SingularDesignError

        raise SingularDesignError("selected design is rank deficient") from exc


def theory_lambda(X: np.ndarray, sigma_hat: float, kappa: float = 1.0) -> float:
    """Penalty at the noise scale: kappa * sigma * sqrt(2 log p) * mean column norm."""
    p = X.shape[1]
    mean_norm = float(np.mean(np.sqrt(np.sum(X**2, axis=0))))
    return kappa * sigma_hat * math.sqrt(2.0 * math.log(p)) * mean_norm


def _base_lambda(config: SimConfig, X: np.ndarray, sigma_hat: float) -> float:
    if config.lambda_rule == "theory":
        return theory_lambda(X, sigma_hat)
    return float(config.lambda_rule)


def _exact_intervals(
    config: SimConfig, data: Dataset, lam: float, sigma2_pre: float, rep_seed: int
) -> tuple[list[IntervalEstimate], np.ndarray]:
    tau2 = tau2_from_split(sigma2_pre, config.n, int(round(config.rho * config.n)))
    scheme = RandomizationScheme(kind="carving", tau2=tau2)
    w = sample_randomization(scheme, data.X, seed=rep_seed)
    outcome = solve_randomized_lasso(data, lam=lam, epsilon=0.0, w=w)
    E = outcome.selected
    if E.size == 0:
        return [], E
    rep = lasso_event_rep(data, outcome, lam=lam, epsilon=0.0)
    omega = scheme.covariance(data.X)
    sigma = math.sqrt(
        data.sigma**2 if data.sigma is not None else plug_in_sigma2(data, E, config.model)
    )
    out = []
    for j in range(E.size):
        target = build_target(data, outcome, config.model, j)
        geom = build_geometry(rep, omega, target, outcome)
        params = pivot_params(data, rep, omega, geom, target, sigma=sigma)
        out.append(invert_pivot(params, config.alpha, target_label=int(E[j])))
    return out, E


def _polyhedral_intervals(
    config: SimConfig, data: Dataset, lam: float
) -> tuple[list[IntervalEstimate], np.ndarray]:
    outcome = solve_randomized_lasso(data, lam=lam, epsilon=0.0, w=np.zeros(data.p))
    E = outcome.selected
    if E.size == 0:
        return [], E
    sigma = math.sqrt(
        data.sigma**2 if data.sigma is not None else plug_in_sigma2(data, E, config.model)
    )
    out = []
    for j in range(E.size):
        target = build_target(data, outcome, config.model, j)
        out.append(
            polyhedral_interval(
                data,
                E,
                outcome.signs,
                target,
                sigma,
                lam,
                config.alpha,
                target_label=int(E[j]),
            )
        )
    return out, E


def _run_replicate(config: SimConfig, rep_idx: int) -> tuple[list[dict], dict[str, str]]:
    """All methods on one generated dataset; returns rows and per-method status."""
    X = generate_design(config.n, config.p, config.corr, _seed_for(config.seed, rep_idx, 0))
    support = support_indices(config.p, config.sparsity)
    y, beta = generate_response(
        X, support, config.signal_fraction, config.sigma2, _seed_for(config.seed, rep_idx, 1)
    )
    data = Dataset(y=y, X=X, sigma=None)
    sigma2_pre = plug_in_sigma2(data, np.arange(config.p), "full")
    lam = _base_lambda(config, X, math.sqrt(sigma2_pre))
    rows: list[dict] = []
    status: dict[str, str] = {}
    f_uv = (1.0 - config.rho) / config.rho
    for method in config.methods:
        try:
            if method == "exact":
                ints, E = _exact_intervals(
                    config, data, lam, sigma2_pre, _seed_for(config.seed, rep_idx, 2)
                )
            elif method == "polyhedral":
                ints, E = _polyhedral_intervals(config, data, lam)
            elif method == "split":
                # subsample penalty matched to the carving calibration
                ints = split_inference(
                    data,
                    config.rho,
                    config.rho * lam,
                    config.alpha,
                    config.model,
                    _seed_for(config.seed, rep_idx, 3),
                )
                E = np.array([e.target_label for e in ints], dtype=int)
            else:
                # selection noise is inflated by (1+f): scale the penalty along
                ints = uv_inference(
                    data,
                    f_uv,
                    math.sqrt(1.0 + f_uv) * lam,
                    config.alpha,
                    config.model,
                    _seed_for(config.seed, rep_idx, 4),
                )
                E = np.array([e.target_label for e in ints], dtype=int)
        except ExactSIError as exc:
            status[method] = f"failed: {exc}"
            continue
        f1 = f1_score(E, support)
        if not ints:
            status[method] = "empty"
            rows.append(
                {
                    "rep": rep_idx,
                    "method": method,
                    "coordinate": -1,
                    "lower": math.nan,
                    "upper": math.nan,
                    "truth": math.nan,
                    "covered": -1,
                    "length": math.nan,
                    "f1": f1,
                    "selected_size": 0,
                }
            )
            continue
        status[method] = "ok"
        truths = true_projected_target(X, E, support, beta, config.model)
        for est, truth in zip(ints, truths):
            rows.append(
                {
                    "rep": rep_idx,
                    "method": method,
                    "coordinate": int(est.target_label),
                    "lower": est.lower,
                    "upper": est.upper,
                    "truth": float(truth),
                    "covered": int(est.covers(float(truth))),
                    "length": est.length,
                    "f1": f1,
                    "selected_size": int(E.size),
                    "clipped": int(est.clipped),  # internal, not a CSV column
                }
            )
    return rows, status


def _replicate_task(args):
    return _run_replicate(*args)


def _mean_se(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=float)
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else math.nan
    return float(arr.mean()), se


def run_study(config: SimConfig, workers: int = 1) -> StudySummary:
    """Run the configured study; identical output for any worker count."""
    tasks = [(config, r) for r in range(config.n_reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate_task, tasks, chunksize=4))
    else:
        results = [_run_replicate(config, r) for r in range(config.n_reps)]

    all_rows = [row for rows, _ in results for row in rows]
    summaries: dict[str, MethodSummary] = {}
    for method in config.methods:
        statuses = [status.get(method, "failed: missing") for _, status in results]
        n_empty = sum(s == "empty" for s in statuses)
        n_failed = sum(s.startswith("failed") for s in statuses)
        per_rep_cov: list[float] = []
        per_rep_len: list[float] = []
        per_rep_f1: list[float] = []
        clipped = total = 0
        for rep_idx, (rows, status) in enumerate(results):
            s = status.get(method)
            mrows = [r for r in rows if r["method"] == method and r["coordinate"] >= 0]
            if s == "empty":
                per_rep_f1.extend(r["f1"] for r in rows if r["method"] == method)
                continue
            if s != "ok":
                continue
            per_rep_cov.append(float(np.mean([r["covered"] for r in mrows])))
            per_rep_len.append(float(np.mean([r["length"] for r in mrows])))
            per_rep_f1.append(mrows[0]["f1"])
            total += len(mrows)
        if method == "polyhedral":
            clipped = sum(
                r.get("clipped", 0)
                for rows, _ in results
                for r in rows
                if r["method"] == method and r["coordinate"] >= 0
            )
        cov, cov_se = _mean_se(per_rep_cov)
        ln, ln_se = _mean_se(per_rep_len)
        f1m, f1_se = _mean_se(per_rep_f1)
        summaries[method] = MethodSummary(
            method=method,
            n_reps=config.n_reps,
            n_used=len(per_rep_cov),
            n_empty=n_empty,
            n_failed=n_failed,
            coverage=cov,
            coverage_se=cov_se,
            length=ln,
            length_se=ln_se,
            f1=f1m,
            f1_se=f1_se,
            clipped_rate=clipped / total if total else 0.0,
        )
    return StudySummary(config=config, methods=summaries, rows=all_rows)


def validate_pivot_uniformity(
    config: SimConfig, target_shift_sds: float = 0.0
) -> dict[str, UniformityReport]:
    """Pool pivots at the true projected targets and test them against Unif(0,1).

    The design stays fixed across replicates; response and randomization are
    redrawn, and the noise level is taken as known so the check isolates the
    pivot itself.  Requires the exact method; also reports the polyhedral
    pivot when listed.  ``target_shift_sds`` displaces the evaluation point by
    that many pivot standard deviations (a power sanity knob: shifted targets
    must break uniformity).
    """
    if "exact" not in config.methods:
        raise InvalidArgumentError("uniformity validation requires the exact method")
    X = generate_design(config.n, config.p, config.corr, _seed_for(config.seed, 0, 10))
    support = support_indices(config.p, config.sparsity)
    sigma = math.sqrt(config.sigma2)
    n1 = int(round(config.rho * config.n))
    tau2 = tau2_from_split(config.sigma2, config.n, n1)
    scheme = RandomizationScheme(kind="carving", tau2=tau2)
    omega = scheme.covariance(X)
    lam_fixed = (
        theory_lambda(X, sigma) if config.lambda_rule == "theory" else float(config.lambda_rule)
    )
    pooled: dict[str, list[float]] = {m: [] for m in config.methods if m in ("exact", "polyhedral")}
    for rep_idx in range(config.n_reps):
        y, beta = generate_response(
            X, support, config.signal_fraction, config.sigma2, _seed_for(config.seed, rep_idx, 11)
        )
        data = Dataset(y=y, X=X, sigma=sigma)
        if "exact" in pooled:
            w = sample_randomization(scheme, X, seed=_seed_for(config.seed, rep_idx, 12))
            try:
                outcome = solve_randomized_lasso(data, lam=lam_fixed, epsilon=0.0, w=w)
                E = outcome.selected
                if E.size:
                    rep = lasso_event_rep(data, outcome, lam=lam_fixed, epsilon=0.0)
                    truths = true_projected_target(X, E, support, beta, config.model)
                    for j in range(E.size):
                        target = build_target(data, outcome, config.model, j)
                        geom = build_geometry(rep, omega, target, outcome)
                        params = pivot_params(data, rep, omega, geom, target, sigma=sigma)
                        at = float(truths[j]) + target_shift_sds * math.sqrt(params.sigma_j2)
                        pooled["exact"].append(exact_pivot(params, at))
            except ExactSIError:
                pass
        if "polyhedral" in pooled:
            try:
                outcome = solve_randomized_lasso(
                    data, lam=lam_fixed, epsilon=0.0, w=np.zeros(config.p)
                )
                E = outcome.selected
                if E.size:
                    truths = true_projected_target(X, E, support, beta, config.model)
                    for j in range(E.size):
                        target = build_target(data, outcome, config.model, j)
                        at = float(truths[j]) + target_shift_sds * sigma * math.sqrt(
                            target.norm2
                        )
                        pooled["polyhedral"].append(
                            polyhedral_pivot(
                                data, E, outcome.signs, target, sigma, lam_fixed, at
                            )
                        )
            except ExactSIError:
                pass
    reports = {}
    for method, vals in pooled.items():
        if len(vals) < 200:
            raise InsufficientSampleError(
                f"only {len(vals)} pooled pivot values for {method}; need at least 200"
            )
        stat, pval = kstest(np.asarray(vals), "uniform")
        reports[method] = UniformityReport(
            method=method, statistic=float(stat), p_value=float(pval), n_pooled=len(vals)
        )
    return reports
