import math

import numpy as np
import pytest
from conftest import carving_fit, toy_fit
from scipy.special import ndtr, ndtri

from exactsi.conditioning import build_geometry, build_target
from exactsi.errors import GeometryInconsistencyError, InvalidArgumentError
from exactsi.inference import (
    IntervalEstimate,
    PivotParams,
    carving_pivot_params,
    exact_pivot,
    invert_pivot,
    lambda_delta,
    pivot_params,
    plug_in_sigma2,
    polyhedral_interval,
    polyhedral_pivot,
    split_inference,
    uv_inference,
)
from exactsi.numerics import FULL_LINE, Interval, QuadratureSpec
from exactsi.selection import (
    Dataset,
    RandomizationScheme,
    lasso_event_rep,
    solve_randomized_lasso,
)


def toy_pivot_setup():
    data, out, rep, omega = toy_fit()
    target = build_target(data, out, "selected", 0)
    geom = build_geometry(rep, omega, target, out)
    params = pivot_params(data, rep, omega, geom, target, sigma=1.0)
    return data, out, rep, omega, target, geom, params


class TestLambdaDelta:
    def test_toy_theta_intercept(self):
        data, out, rep, omega, target, geom, params = toy_pivot_setup()
        gamma = np.zeros(2)
        lam_val, delta = lambda_delta(gamma, rep.sub, rep, omega, geom)
        assert float(geom.rj @ delta) == pytest.approx(1.0, abs=1e-10)
        assert lam_val == pytest.approx(1.0, abs=1e-10)

    def test_zero_inputs_zero_output(self):
        data, out, rep, omega, target, geom, _ = toy_pivot_setup()
        rep.T = np.zeros_like(rep.T)
        lam_val, delta = lambda_delta(np.zeros(2), rep.sub, rep, omega, geom)
        assert lam_val == 0.0
        assert np.allclose(delta, 0.0)

    def test_affine_in_response(self):
        rng = np.random.default_rng(0)
        data, out, rep, omega, _, _ = carving_fit(rng)
        target = build_target(data, out, "selected", 0)
        geom = build_geometry(rep, omega, target, out)
        v1 = rng.standard_normal(data.n)
        v2 = rng.standard_normal(data.n)
        l0, d0 = lambda_delta(np.zeros(data.n), rep.sub, rep, omega, geom)
        l1, d1 = lambda_delta(v1, rep.sub, rep, omega, geom)
        l2, d2 = lambda_delta(v2, rep.sub, rep, omega, geom)
        l12, d12 = lambda_delta(v1 + v2, rep.sub, rep, omega, geom)
        assert l12 + l0 == pytest.approx(l1 + l2, rel=1e-10, abs=1e-12)
        assert np.allclose(d12 + d0, d1 + d2, atol=1e-10)


class TestPivotParams:
    def test_toy_constants(self):
        _, _, _, _, _, _, params = toy_pivot_setup()
        assert params.vartheta2 == pytest.approx(1.0, abs=1e-10)
        assert params.sigma_j2 == pytest.approx(1.0, abs=1e-10)
        assert params.lambda_j == pytest.approx(1.0, abs=1e-10)
        assert params.zeta_j == pytest.approx(0.0, abs=1e-10)
        assert params.theta_intercept == pytest.approx(1.0, abs=1e-10)
        assert params.theta_slope == pytest.approx(-1.0, abs=1e-10)
        assert params.beta_hat_j == pytest.approx(2.0)

    def test_generic_matches_carving_closed_form(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            data, out, rep, omega, lam, tau2 = carving_fit(rng)
            for j in range(out.selected.size):
                target = build_target(data, out, "selected", j)
                geom = build_geometry(rep, omega, target, out)
                generic = pivot_params(data, rep, omega, geom, target, sigma=1.0)
                closed = carving_pivot_params(data, out, target, 1.0, tau2, lam)
                assert generic.vartheta2 == pytest.approx(closed.vartheta2, rel=1e-8)
                assert generic.sigma_j2 == pytest.approx(closed.sigma_j2, rel=1e-8)
                assert generic.lambda_j == pytest.approx(1.0, rel=1e-8)
                assert abs(generic.zeta_j) < 1e-8 * max(1, abs(generic.beta_hat_j))
                assert generic.theta_intercept == pytest.approx(
                    closed.theta_intercept, rel=1e-8, abs=1e-10
                )
                assert generic.interval.lower == pytest.approx(
                    closed.interval.lower, rel=1e-8, abs=1e-8
                )
                assert generic.interval.upper == pytest.approx(
                    closed.interval.upper, rel=1e-8, abs=1e-8
                )

    def test_isotropic_orthonormal_single_feature(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(12)
        x /= np.linalg.norm(x)
        X = x[:, None]
        y = 3.0 * x + 0.2 * rng.standard_normal(12)
        data = Dataset(y=y, X=X, sigma=1.0)
        tau2, eps = 0.8, 0.3
        w = np.array([0.25])
        out = solve_randomized_lasso(data, lam=0.5, epsilon=eps, w=w)
        rep = lasso_event_rep(data, out, lam=0.5, epsilon=eps)
        omega = RandomizationScheme(kind="isotropic", tau2=tau2).covariance(X)
        target = build_target(data, out, "selected", 0)
        geom = build_geometry(rep, omega, target, out)
        params = pivot_params(data, rep, omega, geom, target, sigma=1.0)
        # hand algebra at p=1 with ||x|| = 1: Theta = tau2/(1+eps)^2,
        # r = -(1+eps)/tau2, so the weight variance is exactly 1/tau2
        assert params.vartheta2 == pytest.approx(1.0 / tau2, rel=1e-10)


class TestExactPivot:
    def test_full_line_reduces_to_gaussian_cdf(self):
        _, _, _, _, _, _, params = toy_pivot_setup()
        forced = PivotParams(
            vartheta2=params.vartheta2,
            sigma_j2=params.sigma_j2,
            lambda_j=params.lambda_j,
            zeta_j=params.zeta_j,
            theta_intercept=params.theta_intercept,
            theta_slope=params.theta_slope,
            interval=FULL_LINE,
            beta_hat_j=params.beta_hat_j,
        )
        assert exact_pivot(forced, 2.0) == pytest.approx(0.5, abs=1e-9)
        assert exact_pivot(forced, 1.0) == pytest.approx(float(ndtr(1.0)), abs=1e-9)

    def test_toy_rejection_oracle(self):
        # at beta0 = 1 the ratio is P(X<=2, X-Z>=1)/P(X-Z>=1) for independent
        # X ~ N(1,1), Z ~ N(0,1), which collapses to Phi(1)^2
        _, _, _, _, _, _, params = toy_pivot_setup()
        got = exact_pivot(params, 1.0)
        assert got == pytest.approx(float(ndtr(1.0)) ** 2, abs=1e-9)
        rng = np.random.default_rng(3)
        x = rng.normal(1.0, 1.0, size=1_000_000)
        z = rng.normal(0.0, 1.0, size=1_000_000)
        keep = x - z >= 1.0
        mc = np.mean((x <= 2.0) & keep) / np.mean(keep)
        se = math.sqrt(got * (1 - got) / keep.sum()) / np.mean(keep) ** 0
        assert abs(got - mc) < 4 * max(se, 1e-4)

    def test_strictly_decreasing_in_beta0(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            data, out, rep, omega, _, _ = carving_fit(rng)
            j = int(rng.integers(out.selected.size))
            target = build_target(data, out, "selected", j)
            geom = build_geometry(rep, omega, target, out)
            params = pivot_params(data, rep, omega, geom, target, sigma=1.0)
            sd = math.sqrt(params.sigma_j2)
            grid = params.beta_hat_j + sd * np.linspace(-8, 8, 161)
            vals = np.array([exact_pivot(params, float(b)) for b in grid])
            diffs = np.diff(vals)
            # nonincreasing everywhere; strictly decreasing away from the
            # diffs that saturate at 0/1 beyond double precision
            assert (diffs <= 0).all()
            interior = (vals[:-1] > 1e-9) & (vals[1:] < 1 - 1e-9)
            assert (diffs[interior] < -1e-12).all()

    def test_quadrature_doubling_stability(self):
        rng = np.random.default_rng(5)
        fine = QuadratureSpec(n_points=8193)
        for _ in range(10):
            data, out, rep, omega, _, _ = carving_fit(rng)
            target = build_target(data, out, "selected", 0)
            geom = build_geometry(rep, omega, target, out)
            params = pivot_params(data, rep, omega, geom, target, sigma=1.0)
            sd = math.sqrt(params.sigma_j2)
            for shift in (-2.0, -0.5, 0.0, 0.5, 2.0):
                b0 = params.beta_hat_j + shift * sd
                assert abs(
                    exact_pivot(params, b0) - exact_pivot(params, b0, fine)
                ) < 1e-8


class TestInvertPivot:
    def test_full_line_gives_classical_z_interval(self):
        _, _, _, _, _, _, params = toy_pivot_setup()
        forced = PivotParams(
            vartheta2=params.vartheta2,
            sigma_j2=1.0,
            lambda_j=1.0,
            zeta_j=0.0,
            theta_intercept=params.theta_intercept,
            theta_slope=-params.vartheta2,
            interval=FULL_LINE,
            beta_hat_j=2.0,
        )
        est = invert_pivot(forced, alpha=0.1)
        z = float(ndtri(0.95))
        assert est.lower == pytest.approx(2.0 - z, abs=1e-6)
        assert est.upper == pytest.approx(2.0 + z, abs=1e-6)

    def test_endpoints_reproduce_tail_targets(self):
        _, _, _, _, _, _, params = toy_pivot_setup()
        est = invert_pivot(params, alpha=0.1)
        assert exact_pivot(params, est.lower) == pytest.approx(0.95, abs=1e-6)
        assert exact_pivot(params, est.upper) == pytest.approx(0.05, abs=1e-6)
        assert est.covers(params.beta_hat_j)

    def test_nesting(self):
        _, _, _, _, _, _, params = toy_pivot_setup()
        wide = invert_pivot(params, alpha=0.05)
        narrow = invert_pivot(params, alpha=0.10)
        assert wide.lower < narrow.lower < narrow.upper < wide.upper


def standard_lasso_fit(rng, n=60, p=10, lam=None, signal=2.5):
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[:2] = signal
    y = X @ beta + rng.standard_normal(n)
    data = Dataset(y=y, X=X, sigma=1.0)
    lam = lam if lam is not None else math.sqrt(2 * math.log(p) * n)
    out = solve_randomized_lasso(data, lam=lam, epsilon=0.0, w=np.zeros(p))
    return data, out, lam


class TestPolyhedral:
    def test_single_feature_bound(self):
        # one positive active feature: the event is beta_hat > lam/||x||^2
        rng = np.random.default_rng(6)
        x = rng.standard_normal(30)
        y = 2.0 * x + 0.3 * rng.standard_normal(30)
        data = Dataset(y=y, X=x[:, None], sigma=1.0)
        lam = 3.0
        out = solve_randomized_lasso(data, lam=lam, epsilon=0.0, w=np.zeros(1))
        assert out.selected.size == 1
        target = build_target(data, out, "selected", 0)
        beta_hat = float(target.contrast @ y)
        h_minus = lam / float(x @ x)
        sd = math.sqrt(target.norm2)
        for beta0 in (0.0, 1.0, 2.5):
            want_num = ndtr((beta_hat - beta0) / sd) - ndtr((h_minus - beta0) / sd)
            want_den = 1.0 - ndtr((h_minus - beta0) / sd)
            got = polyhedral_pivot(data, out.selected, out.signs, target, 1.0, lam, beta0)
            assert got == pytest.approx(want_num / want_den, abs=1e-10)

    def test_interval_self_consistency(self):
        rng = np.random.default_rng(7)
        data, out, lam = standard_lasso_fit(rng)
        target = build_target(data, out, "selected", 0)
        est = polyhedral_interval(
            data, out.selected, out.signs, target, 1.0, lam, alpha=0.1, target_label=0
        )
        if not est.clipped:
            lo_p = polyhedral_pivot(data, out.selected, out.signs, target, 1.0, lam, est.lower)
            hi_p = polyhedral_pivot(data, out.selected, out.signs, target, 1.0, lam, est.upper)
            assert lo_p == pytest.approx(0.95, abs=1e-6)
            assert hi_p == pytest.approx(0.05, abs=1e-6)

    def test_tampered_signs_detected(self):
        rng = np.random.default_rng(8)
        data, out, lam = standard_lasso_fit(rng)
        target = build_target(data, out, "selected", 0)
        bad_signs = -out.signs
        with pytest.raises(GeometryInconsistencyError):
            polyhedral_pivot(data, out.selected, bad_signs, target, 1.0, lam, 0.0)


class TestSplitInference:
    def test_deterministic_and_labeled(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((80, 10))
        beta = np.zeros(10)
        beta[:3] = 3.0
        y = X @ beta + rng.standard_normal(80)
        data = Dataset(y=y, X=X, sigma=1.0)
        lam = 0.8 * math.sqrt(2 * math.log(10) * 64)
        a = split_inference(data, rho=0.8, lam=lam, alpha=0.1, model="selected", seed=3)
        b = split_inference(data, rho=0.8, lam=lam, alpha=0.1, model="selected", seed=3)
        assert [e.target_label for e in a] == [e.target_label for e in b]
        assert all(ea.lower == eb.lower and ea.upper == eb.upper for ea, eb in zip(a, b))
        assert all(0 <= e.target_label < 10 for e in a)
        assert all(e.method == "split" for e in a)

    def test_bad_rho(self):
        rng = np.random.default_rng(10)
        data = Dataset(y=rng.standard_normal(10), X=rng.standard_normal((10, 2)))
        with pytest.raises(InvalidArgumentError):
            split_inference(data, rho=1.5, lam=1.0, alpha=0.1, model="selected", seed=0)


class TestUVInference:
    def test_synthetic_noise_independence(self):
        rng = np.random.default_rng(11)
        f = 0.25
        y = rng.standard_normal(100_000)
        w = rng.standard_normal(100_000) * math.sqrt(f)
        u, v = y + w, y - w / f
        corr = np.corrcoef(u, v)[0, 1]
        assert abs(corr) < 5 / math.sqrt(100_000)

    def test_deterministic_intervals(self):
        rng = np.random.default_rng(12)
        X = rng.standard_normal((90, 8))
        beta = np.zeros(8)
        beta[:2] = 4.0
        y = X @ beta + rng.standard_normal(90)
        data = Dataset(y=y, X=X, sigma=1.0)
        lam = math.sqrt(2 * math.log(8) * 90)
        a = uv_inference(data, f=0.25, lam=lam, alpha=0.1, model="selected", seed=7)
        b = uv_inference(data, f=0.25, lam=lam, alpha=0.1, model="selected", seed=7)
        assert [e.target_label for e in a] == [e.target_label for e in b]
        assert all(ea.lower == eb.lower and ea.upper == eb.upper for ea, eb in zip(a, b))
        assert all(e.method == "uv" for e in a)


class TestPlugInSigma:
    def test_known_variance_recovered(self):
        rng = np.random.default_rng(13)
        X = rng.standard_normal((4000, 5))
        y = X @ np.array([1.0, -1.0, 0.0, 0.0, 2.0]) + 1.7 * rng.standard_normal(4000)
        data = Dataset(y=y, X=X)
        full = plug_in_sigma2(data, np.arange(5), "full")
        sel = plug_in_sigma2(data, np.array([0, 1, 4]), "selected")
        assert full == pytest.approx(1.7**2, rel=0.1)
        assert sel == pytest.approx(1.7**2, rel=0.1)

    def test_interval_estimate_validation(self):
        with pytest.raises(InvalidArgumentError):
            IntervalEstimate(lower=1.0, upper=0.0, level=0.9, target_label=0, method="exact")
