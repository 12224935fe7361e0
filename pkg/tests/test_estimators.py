"""Estimator and variance contracts against independent linear-algebra oracles."""

from __future__ import annotations

import numpy as np
import pytest

from clusterstable import (
    Cluster,
    ClusteredDataset,
    LinearContrast,
    ParameterError,
    SingularGram,
    SingularLeaveOneOutGram,
    ZeroStandardError,
    cr1_factor,
    cr_variance,
    fit_ols,
    fit_sacr,
    jackknife_variance,
    sacr_variance,
    t_statistic,
)
from conftest import make_dataset


def _stack(ds):
    X = np.vstack([c.X for c in ds.clusters])
    Y = np.concatenate([c.Y for c in ds.clusters])
    return X, Y


def _lstsq_theta(X, Y, weights=None):
    # independent reference: SVD least squares on (optionally) weighted rows
    if weights is not None:
        w = np.sqrt(weights)
        X, Y = X * w[:, None], Y * w
    return np.linalg.lstsq(X, Y, rcond=None)[0]


def test_intercept_only_exact_fit():
    clusters = [
        Cluster(id="a", X=np.ones((3, 1)), Y=np.ones(3)),
        Cluster(id="b", X=np.ones((2, 1)), Y=np.ones(2)),
    ]
    fit = fit_ols(ClusteredDataset.from_clusters(clusters))
    assert fit.theta_hat[0] == 1.0
    for u in fit.residuals:
        np.testing.assert_array_equal(u, np.zeros_like(u))


def test_noiseless_slope_recovery():
    clusters = [
        Cluster(id="a", X=np.array([[1.0], [2.0]]), Y=np.array([2.0, 4.0])),
        Cluster(id="b", X=np.array([[3.0], [4.0]]), Y=np.array([6.0, 8.0])),
    ]
    fit = fit_ols(ClusteredDataset.from_clusters(clusters))
    assert abs(fit.theta_hat[0] - 2.0) < 1e-12


def test_ols_matches_lstsq_oracle(rng):
    ds = make_dataset(rng, sizes=[4, 2, 6, 3, 5], dim=3)
    fit = fit_ols(ds)
    X, Y = _stack(ds)
    np.testing.assert_allclose(fit.theta_hat, _lstsq_theta(X, Y), rtol=0, atol=1e-10)
    # normal equations: cluster scores sum to zero
    np.testing.assert_allclose(fit.scores.sum(axis=0), 0.0, atol=1e-8)


def test_sacr_matches_weighted_lstsq_oracle(rng):
    ds = make_dataset(rng, sizes=[4, 2, 6, 3, 5], dim=3)
    fit = fit_sacr(ds)
    X, Y = _stack(ds)
    weights = np.concatenate([np.full(c.n, 1.0 / c.n) for c in ds.clusters])
    np.testing.assert_allclose(
        fit.theta_hat, _lstsq_theta(X, Y, weights), rtol=0, atol=1e-10
    )
    weighted_scores = fit.scores / ds.sizes[:, None]
    np.testing.assert_allclose(weighted_scores.sum(axis=0), 0.0, atol=1e-8)


def test_sacr_equals_ols_under_constant_sizes(rng):
    ds = make_dataset(rng, sizes=[4, 4, 4, 4, 4], dim=2)
    ols, sacr = fit_ols(ds), fit_sacr(ds)
    np.testing.assert_allclose(sacr.theta_hat, ols.theta_hat, rtol=0, atol=1e-10)
    c = LinearContrast(r=[0.0, 1.0], delta_null=1.5)
    v_ols, v_sacr = cr_variance(ols), sacr_variance(sacr)
    # weights 1/N cancel: variance matrices agree up to the (1/N)^2 ratio scaling
    np.testing.assert_allclose(v_sacr.matrix, v_ols.matrix, rtol=1e-10, atol=1e-14)
    assert abs(t_statistic(sacr, v_sacr, c) - t_statistic(ols, v_ols, c)) < 1e-10


def test_sacr_noiseless_recovery(rng):
    ds = make_dataset(rng, sizes=[2, 5, 3], dim=2, noise=0.0)
    fit = fit_sacr(ds)
    np.testing.assert_allclose(fit.theta_hat, [1.0, 2.0], rtol=0, atol=1e-10)


def test_cr_variance_reduces_to_hc0_for_singletons(rng):
    ds = make_dataset(rng, sizes=[1] * 12, dim=2)
    fit = fit_ols(ds)
    v = cr_variance(fit)
    X, Y = _stack(ds)
    u = Y - X @ fit.theta_hat
    bread = np.linalg.inv(X.T @ X)
    meat = sum(np.outer(X[i], X[i]) * u[i] ** 2 for i in range(len(Y)))
    hc0 = bread @ meat @ bread
    np.testing.assert_allclose(v.matrix, hc0, rtol=1e-10, atol=1e-16)
    # SACR with unit sizes is the same estimator and variance
    sacr = fit_sacr(ds)
    np.testing.assert_allclose(sacr_variance(sacr).matrix, v.matrix, rtol=1e-10, atol=1e-16)


def test_zero_residuals_zero_variance():
    clusters = [
        Cluster(id="a", X=np.ones((4, 1)), Y=np.ones(4)),
        Cluster(id="b", X=np.ones((4, 1)), Y=np.ones(4)),
    ]
    fit = fit_ols(ClusteredDataset.from_clusters(clusters))
    assert np.all(cr_variance(fit).matrix == 0.0)


def test_variance_quadratic_in_response_scale(rng):
    ds = make_dataset(rng, sizes=[3, 4, 5, 2], dim=2)
    doubled = ClusteredDataset.from_clusters(
        [Cluster(id=c.id, X=c.X, Y=2.0 * c.Y) for c in ds.clusters]
    )
    v1 = cr_variance(fit_ols(ds)).matrix
    v2 = cr_variance(fit_ols(doubled)).matrix
    np.testing.assert_allclose(v2, 4.0 * v1, rtol=1e-12, atol=1e-18)
    c1 = LinearContrast(r=[0.0, 1.0], delta_null=0.7)
    c2 = LinearContrast(r=[0.0, 1.0], delta_null=1.4)
    t1 = t_statistic(fit_ols(ds), cr_variance(fit_ols(ds)), c1)
    t2 = t_statistic(fit_ols(doubled), cr_variance(fit_ols(doubled)), c2)
    assert abs(t1 - t2) < 1e-10


def test_sacr_variance_matches_triple_product_oracle(rng):
    ds = make_dataset(rng, sizes=[3, 6, 2, 4], dim=2)
    fit = fit_sacr(ds)
    v = sacr_variance(fit)
    gram = sum((1.0 / c.n) * c.X.T @ c.X for c in ds.clusters)
    meat = np.zeros((2, 2))
    for c in ds.clusters:
        s = c.X.T @ (c.Y - c.X @ fit.theta_hat)
        meat += np.outer(s, s) / c.n**2
    oracle = np.linalg.inv(gram) @ meat @ np.linalg.inv(gram)
    np.testing.assert_allclose(v.matrix, oracle, rtol=1e-10, atol=1e-16)


def test_jackknife_matches_enumeration_oracle(rng):
    ds = make_dataset(rng, sizes=[3, 4, 5], dim=2)
    v = jackknife_variance(ds, "ols")
    theta_full = _lstsq_theta(*_stack(ds))
    oracle = np.zeros((2, 2))
    for g in range(3):
        keep = [c for i, c in enumerate(ds.clusters) if i != g]
        sub = ClusteredDataset.from_clusters(keep)
        delta = _lstsq_theta(*_stack(sub)) - theta_full
        oracle += np.outer(delta, delta)
    np.testing.assert_allclose(v.matrix, oracle, rtol=1e-8, atol=1e-12)


def test_jackknife_sacr_matches_enumeration_oracle(rng):
    ds = make_dataset(rng, sizes=[3, 4, 5, 2], dim=2)
    v = jackknife_variance(ds, "sacr")
    def sacr_theta(subset):
        gram = sum((1.0 / c.n) * c.X.T @ c.X for c in subset)
        rhs = sum((1.0 / c.n) * c.X.T @ c.Y for c in subset)
        return np.linalg.solve(gram, rhs)
    theta_full = sacr_theta(ds.clusters)
    oracle = np.zeros((2, 2))
    for g in range(4):
        delta = sacr_theta([c for i, c in enumerate(ds.clusters) if i != g]) - theta_full
        oracle += np.outer(delta, delta)
    np.testing.assert_allclose(v.matrix, oracle, rtol=1e-8, atol=1e-12)


def test_jackknife_duplicated_clusters_exactly_zero():
    block_x = np.array([[1.0, 0.0], [1.0, 2.0]])
    block_y = np.array([3.0, 7.0])
    clusters = [Cluster(id=f"c{i}", X=block_x, Y=block_y) for i in range(4)]
    v = jackknife_variance(ClusteredDataset.from_clusters(clusters), "ols")
    assert np.all(v.matrix == 0.0)


def test_jackknife_singular_leave_one_out_names_cluster():
    # only cluster "treated" carries the second regressor
    clusters = [
        Cluster(id="c1", X=np.column_stack([np.ones(3), np.zeros(3)]), Y=np.arange(3.0)),
        Cluster(id="c2", X=np.column_stack([np.ones(3), np.zeros(3)]), Y=np.arange(3.0)),
        Cluster(id="treated", X=np.column_stack([np.ones(3), np.ones(3)]), Y=np.arange(3.0)),
    ]
    with pytest.raises(SingularLeaveOneOutGram) as err:
        jackknife_variance(ClusteredDataset.from_clusters(clusters), "ols")
    assert err.value.cluster_id == "treated"


def test_singular_gram_reports_condition_number(rng):
    n = 6
    x = rng.normal(size=n)
    clusters = [
        Cluster(id="a", X=np.column_stack([np.ones(3), x[:3], 2 * x[:3]]), Y=x[:3]),
        Cluster(id="b", X=np.column_stack([np.ones(3), x[3:], 2 * x[3:]]), Y=x[3:]),
    ]
    with pytest.raises(SingularGram) as err:
        fit_ols(ClusteredDataset.from_clusters(clusters))
    assert err.value.condition_number > 1e12 or not np.isfinite(err.value.condition_number)


def test_t_statistic_zero_at_estimate(small_ds):
    fit = fit_ols(small_ds)
    v = cr_variance(fit)
    r = np.array([0.0, 1.0])
    c = LinearContrast(r=r, delta_null=float(r @ fit.theta_hat))
    assert t_statistic(fit, v, c) == 0.0


def test_t_statistic_matches_formula_oracle(rng):
    ds = make_dataset(rng, sizes=[3, 5, 2, 4, 6], dim=2)
    fit = fit_ols(ds)
    c = LinearContrast(r=[0.0, 1.0], delta_null=2.0)
    t = t_statistic(fit, cr_variance(fit), c)
    # plain-loop re-derivation of eq-form: bread, scores, sandwich
    gram = sum(cl.X.T @ cl.X for cl in ds.clusters)
    rhs = sum(cl.X.T @ cl.Y for cl in ds.clusters)
    theta = np.linalg.solve(gram, rhs)
    meat = np.zeros((2, 2))
    for cl in ds.clusters:
        s = cl.X.T @ (cl.Y - cl.X @ theta)
        meat += np.outer(s, s)
    bread = np.linalg.inv(gram)
    sigma = np.sqrt(float(np.array([0, 1.0]) @ bread @ meat @ bread @ np.array([0, 1.0])))
    oracle = (theta[1] - 2.0) / sigma
    assert abs(t - oracle) < 1e-10


def test_t_statistic_zero_standard_error():
    clusters = [
        Cluster(id="a", X=np.ones((2, 1)), Y=np.ones(2)),
        Cluster(id="b", X=np.ones((2, 1)), Y=np.ones(2)),
    ]
    fit = fit_ols(ClusteredDataset.from_clusters(clusters))
    with pytest.raises(ZeroStandardError):
        t_statistic(fit, cr_variance(fit), LinearContrast(r=[1.0], delta_null=0.0))


def test_affine_reparameterization_invariance(rng):
    # X -> X A maps theta to A^{-1} theta; the contrast r~ = A'r / ||A'r|| with
    # delta_null scaled by 1/||A'r|| leaves the t-statistic unchanged
    ds = make_dataset(rng, sizes=[4, 3, 5, 4], dim=3)
    r = np.array([0.2, -0.4, 0.6])
    r /= np.linalg.norm(r)
    c = LinearContrast(r=r, delta_null=0.3)
    t_base = t_statistic(fit_ols(ds), cr_variance(fit_ols(ds)), c)
    for _ in range(5):
        A = rng.normal(size=(3, 3)) + 3 * np.eye(3)
        mapped = ClusteredDataset.from_clusters(
            [Cluster(id=cl.id, X=cl.X @ A, Y=cl.Y) for cl in ds.clusters]
        )
        r_tilde_raw = A.T @ r
        scale = np.linalg.norm(r_tilde_raw)
        c_tilde = LinearContrast(r=r_tilde_raw / scale, delta_null=0.3 / scale)
        t_mapped = t_statistic(fit_ols(mapped), cr_variance(fit_ols(mapped)), c_tilde)
        assert abs(t_mapped - t_base) < 1e-8


def test_variances_symmetric_psd(rng):
    for _ in range(10):
        sizes = rng.integers(1, 6, size=6)
        ds = make_dataset(rng, sizes=sizes, dim=2)
        for v in (
            cr_variance(fit_ols(ds)),
            sacr_variance(fit_sacr(ds)),
            jackknife_variance(ds, "ols"),
            jackknife_variance(ds, "sacr"),
        ):
            np.testing.assert_allclose(v.matrix, v.matrix.T, rtol=0, atol=1e-14)
            assert np.linalg.eigvalsh(v.matrix).min() >= -1e-10


def test_contrast_normalization():
    c = LinearContrast(r=[3.0, 4.0])
    np.testing.assert_allclose(np.linalg.norm(c.r), 1.0, rtol=0, atol=1e-15)
    np.testing.assert_allclose(c.r, [0.6, 0.8], rtol=0, atol=1e-15)
    with pytest.raises(ParameterError):
        LinearContrast(r=[0.0, 0.0])


def test_cr1_factor_value():
    assert abs(cr1_factor(50, 500, 2) - (50 / 49) * (499 / 498)) < 1e-15
    with pytest.raises(ParameterError):
        cr1_factor(1, 10, 2)
