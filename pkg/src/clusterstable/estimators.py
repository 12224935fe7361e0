"""OLS and size-adjusted (SACR) estimation with cluster-robust variances.

Conventions used throughout:

* ``theta_hat = (sum_g w_g X_g'X_g)^{-1} (sum_g w_g X_g'Y_g)`` with per-cluster
  weight ``w_g = 1`` for OLS and ``w_g = 1/N_g`` for SACR (equivalently,
  weighted least squares with per-observation analytic weight ``1/N_g``).
* cluster scores are the unweighted ``S_g = X_g' U_g`` evaluated at the fit's
  residuals; weights re-enter through the variance formulas.
* sandwich variances use un-normalized sums, so the t-statistic is
  ``(r'theta_hat - delta_null) / sqrt(r' V r)`` with no extra ``1/G`` factor,
  for both the analytic and the jackknife variance estimators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ClusteredDataset
from .errors import (
    ParameterError,
    SingularGram,
    SingularLeaveOneOutGram,
    ZeroStandardError,
)

# Gram matrices at or beyond this condition number are treated as singular.
COND_LIMIT = 1e12

OLS = "ols"
SACR = "sacr"

CR = "cr"
CR_JACK = "cr_jack"
SACR_VAR = "sacr"
SACR_JACK = "sacr_jack"


@dataclass(frozen=True)
class ClusterCrossProducts:
    """Per-cluster sufficient statistics: X_g'X_g, X_g'Y_g and sizes."""

    xtx: np.ndarray  # (G, d, d)
    xty: np.ndarray  # (G, d)
    sizes: np.ndarray  # (G,)


def cross_products(ds: ClusteredDataset) -> ClusterCrossProducts:
    G, d = ds.G, ds.dim_theta
    xtx = np.empty((G, d, d))
    xty = np.empty((G, d))
    for g, cluster in enumerate(ds.clusters):
        xtx[g] = cluster.X.T @ cluster.X
        xty[g] = cluster.X.T @ cluster.Y
    return ClusterCrossProducts(xtx=xtx, xty=xty, sizes=ds.sizes)


@dataclass(frozen=True)
class RegressionFit:
    """Coefficients plus the cluster-level ingredients every variance needs."""

    theta_hat: np.ndarray  # (d,)
    gram: np.ndarray  # (d, d), weighted or unweighted sum of X_g'X_g
    gram_inverse: np.ndarray  # (d, d)
    scores: np.ndarray  # (G, d), S_g = X_g' U_g at this fit's residuals
    residuals: tuple[np.ndarray, ...]  # per-cluster U_g
    kind: str  # OLS or SACR

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(u) for u in self.residuals], dtype=np.int64)


@dataclass(frozen=True)
class VarianceEstimate:
    matrix: np.ndarray
    method: str
    a_G: float = 1.0


@dataclass(frozen=True)
class LinearContrast:
    """Unit-norm contrast vector r and the hypothesized value of r'theta."""

    r: np.ndarray
    delta_null: float = 0.0

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64).ravel()
        norm = float(np.linalg.norm(r))
        if norm == 0.0 or not np.isfinite(norm):
            raise ParameterError("contrast vector must be non-zero and finite")
        if abs(norm - 1.0) > 1e-12:
            r = r / norm
        r.flags.writeable = False
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "delta_null", float(self.delta_null))


def cr1_factor(G: int, N: int, dim_theta: int) -> float:
    """Common finite-sample adjustment G/(G-1) * (N-1)/(N-dim_theta)."""
    if G < 2 or N <= dim_theta:
        raise ParameterError("cr1 factor requires G >= 2 and N > dim_theta")
    return (G / (G - 1)) * ((N - 1) / (N - dim_theta))


def _invert_gram(gram: np.ndarray, context: str = "gram matrix") -> np.ndarray:
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond >= COND_LIMIT:
        raise SingularGram(float(cond), context=context)
    return np.linalg.solve(gram, np.eye(gram.shape[0]))


def _fit(ds: ClusteredDataset, kind: str) -> RegressionFit:
    cp = cross_products(ds)
    weights = np.ones(ds.G) if kind == OLS else 1.0 / cp.sizes
    gram = np.einsum("g,gij->ij", weights, cp.xtx)
    rhs = weights @ cp.xty
    gram_inverse = _invert_gram(gram, context=f"{kind} gram matrix")
    theta_hat = np.linalg.solve(gram, rhs)
    scores = cp.xty - np.einsum("gij,j->gi", cp.xtx, theta_hat)
    residuals = tuple(c.Y - c.X @ theta_hat for c in ds.clusters)
    return RegressionFit(
        theta_hat=theta_hat,
        gram=gram,
        gram_inverse=gram_inverse,
        scores=scores,
        residuals=residuals,
        kind=kind,
    )


def fit_ols(ds: ClusteredDataset) -> RegressionFit:
    """Ordinary least squares on the pooled sample."""
    return _fit(ds, OLS)


def fit_sacr(ds: ClusteredDataset) -> RegressionFit:
    """Size-adjusted least squares: every cluster enters with weight 1/N_g."""
    return _fit(ds, SACR)


def cr_variance(fit: RegressionFit, a_G: float = 1.0) -> VarianceEstimate:
    """Cluster-robust sandwich a_G * Ginv (sum_g S_g S_g') Ginv for an OLS fit."""
    if fit.kind != OLS:
        raise ParameterError("cr_variance requires an OLS fit")
    meat = fit.scores.T @ fit.scores
    matrix = a_G * (fit.gram_inverse @ meat @ fit.gram_inverse)
    return VarianceEstimate(matrix=matrix, method=CR, a_G=float(a_G))


def sacr_variance(fit: RegressionFit, a_G: float = 1.0) -> VarianceEstimate:
    """Size-adjusted sandwich with meat sum_g N_g^{-2} S_g S_g'."""
    if fit.kind != SACR:
        raise ParameterError("sacr_variance requires a SACR fit")
    weighted = fit.scores / fit.sizes[:, None]
    meat = weighted.T @ weighted
    matrix = a_G * (fit.gram_inverse @ meat @ fit.gram_inverse)
    return VarianceEstimate(matrix=matrix, method=SACR_VAR, a_G=float(a_G))


def jackknife_variance(ds: ClusteredDataset, kind: str = OLS) -> VarianceEstimate:
    """Leave-one-cluster-out variance sum_g (theta_{-g} - theta)(theta_{-g} - theta)'.

    This targets Var(theta_hat) directly, so t-statistics divide by
    sqrt(r' V r) without further scaling. Refits reuse the full Gram via
    rank-d downdates; each leave-one-out Gram is condition-checked.
    """
    if kind not in (OLS, SACR):
        raise ParameterError(f"unknown fit kind {kind!r}")
    cp = cross_products(ds)
    weights = np.ones(ds.G) if kind == OLS else 1.0 / cp.sizes
    gram = np.einsum("g,gij->ij", weights, cp.xtx)
    rhs = weights @ cp.xty
    _invert_gram(gram, context=f"{kind} gram matrix")
    theta_hat = np.linalg.solve(gram, rhs)

    grams_loo = gram[None, :, :] - weights[:, None, None] * cp.xtx
    rhs_loo = rhs[None, :] - weights[:, None] * cp.xty
    conds = np.linalg.cond(grams_loo)
    bad = np.flatnonzero(~np.isfinite(conds) | (conds >= COND_LIMIT))
    if bad.size:
        g = int(bad[0])
        raise SingularLeaveOneOutGram(float(conds[g]), ds.clusters[g].id)
    deltas = np.linalg.solve(grams_loo, rhs_loo[..., None])[..., 0] - theta_hat[None, :]
    matrix = deltas.T @ deltas  # summation over g in ascending order
    method = CR_JACK if kind == OLS else SACR_JACK
    return VarianceEstimate(matrix=matrix, method=method, a_G=1.0)


def t_statistic(fit: RegressionFit, v: VarianceEstimate, c: LinearContrast) -> float:
    """Self-normalized statistic (r'theta_hat - delta_null) / sqrt(r' V r)."""
    variance = float(c.r @ v.matrix @ c.r)
    if variance <= 0.0 or not np.isfinite(variance):
        raise ZeroStandardError(
            f"contrast variance r'Vr = {variance!r} is not strictly positive"
        )
    return float((c.r @ fit.theta_hat - c.delta_null) / np.sqrt(variance))


def standard_error(v: VarianceEstimate, c: LinearContrast) -> float:
    """sqrt(r' V r); raises ZeroStandardError when not strictly positive."""
    variance = float(c.r @ v.matrix @ c.r)
    if variance <= 0.0 or not np.isfinite(variance):
        raise ZeroStandardError(
            f"contrast variance r'Vr = {variance!r} is not strictly positive"
        )
    return float(np.sqrt(variance))
