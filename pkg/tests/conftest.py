import math

import numpy as np

from exactsi.selection import (
    Dataset,
    RandomizationScheme,
    lasso_event_rep,
    sample_randomization,
    solve_randomized_lasso,
)


def toy_fit():
    """The two-row single-feature instance with hand-checkable arithmetic."""
    data = Dataset(y=np.array([2.0, 0.0]), X=np.array([[1.0], [0.0]]), sigma=1.0)
    out = solve_randomized_lasso(data, lam=1.0, epsilon=0.0, w=np.array([0.5]))
    rep = lasso_event_rep(data, out, lam=1.0, epsilon=0.0)
    omega = RandomizationScheme(kind="carving", tau2=1.0).covariance(data.X)
    return data, out, rep, omega


def random_dataset(rng, n=40, p=8, sigma=1.0):
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[: p // 3] = rng.uniform(1, 3, size=p // 3) * rng.choice([-1, 1], size=p // 3)
    y = X @ beta + sigma * rng.standard_normal(n)
    return Dataset(y=y, X=X, sigma=sigma)


def carving_fit(rng, n=40, p=8, tau2=0.7, lam=None, min_selected=1):
    """A random carving-randomized lasso fit with a nonempty selection."""
    for _ in range(50):
        X = rng.standard_normal((n, p))
        beta = np.zeros(p)
        k = max(1, p // 4)
        beta[rng.choice(p, size=k, replace=False)] = rng.uniform(1, 3, size=k)
        y = X @ beta + rng.standard_normal(n)
        scheme = RandomizationScheme(kind="carving", tau2=tau2)
        w = sample_randomization(scheme, X, seed=int(rng.integers(1 << 30)))
        lam_use = lam if lam is not None else 1.2 * math.sqrt(2 * math.log(p) * n) / 2
        data = Dataset(y=y, X=X, sigma=1.0)
        out = solve_randomized_lasso(data, lam=lam_use, epsilon=0.0, w=w)
        if out.selected.size >= min_selected:
            rep = lasso_event_rep(data, out, lam=lam_use, epsilon=0.0)
            return data, out, rep, scheme.covariance(X), lam_use, tau2
    raise AssertionError("could not generate a nonempty selection")
