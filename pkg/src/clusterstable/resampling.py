"""Score subsampling and cluster bootstrap baselines.

The score subsampling statistic for a subset B of b clusters reuses the
full-sample Gram inverse and recomputes only the linear component:

    delta_b = (G/b) r' Ainv sum_{g in B} X_g'Y_g,
    sigma_b^2 = (G/b)^2 r' Ainv ( sum_{g in B} S_{g,B} S_{g,B}' ) Ainv r,

with Ainv = (sum over ALL clusters of X_g'X_g)^{-1} and subset scores
S_{g,B} = X_g'(Y_g - X_g theta_b) evaluated at the subset coefficient
theta_b = (G/b) Ainv sum_{g in B} X_g'Y_g. The empirical distribution of
(delta_b - delta_full)/sigma_b over random subsets supplies critical values
that remain valid when cluster sizes are heavy-tailed. The pairs and wild
cluster bootstraps are implemented as baselines; both are inconsistent in
that regime.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .data import ClusteredDataset
from .errors import (
    InvalidGrid,
    ParameterError,
    TooManyDegenerateDraws,
    TooManySingularResamples,
    ZeroDenominator,
    ZeroSigma,
)
from .estimators import (
    COND_LIMIT,
    LinearContrast,
    RegressionFit,
    cr_variance,
    cross_products,
    fit_ols,
    standard_error,
)

# Exhaustive enumeration replaces random draws when the number of atoms
# (subsets, sign vectors, or resample multisets) is at most this.
ENUMERATION_LIMIT = 5000

PAIRS = "pairs"
WILD_RADEMACHER = "wild_rademacher"


@dataclass(frozen=True)
class SubsamplingDistribution:
    """Sorted subsample statistics plus quantile access via the empirical CDF."""

    draws: np.ndarray  # sorted ascending, all finite
    b: int
    M: int  # number of retained draws, = len(draws)
    seed: int | None
    n_degenerate: int = 0
    enumerated: bool = False

    def cdf(self, t: float) -> float:
        return float(np.searchsorted(self.draws, t, side="right")) / self.M


@dataclass(frozen=True)
class CriticalValues:
    lower: float
    upper: float
    level: float


@dataclass(frozen=True)
class BootstrapResult:
    """Bootstrap statistics in draw (or enumeration-atom) order.

    ``weights`` is None for equally likely draws; exhaustive pairs
    enumeration attaches the multinomial probability of each multiset.
    """

    statistics: np.ndarray
    method: str
    n_requested: int
    n_skipped: int
    weights: np.ndarray | None = None
    seed: int | None = None


@dataclass(frozen=True)
class _SubsampleKernel:
    """Precomputed pieces shared by every subset statistic on one dataset."""

    proj_xty: np.ndarray  # (G,)   w'X_g'Y_g with w = Ainv r
    proj_xtx: np.ndarray  # (G, d) X_g'X_g w
    xty: np.ndarray  # (G, d)
    gram_inverse: np.ndarray
    delta_full: float
    G: int


def _kernel(ds: ClusteredDataset, fit: RegressionFit, c: LinearContrast) -> _SubsampleKernel:
    cp = cross_products(ds)
    w = fit.gram_inverse @ c.r
    proj_xty = cp.xty @ w
    # centering value computed through the same projected sum as the subset
    # statistics, so the full-subset statistic is exactly zero
    return _SubsampleKernel(
        proj_xty=proj_xty,
        proj_xtx=cp.xtx @ w,
        xty=cp.xty,
        gram_inverse=fit.gram_inverse,
        delta_full=float(proj_xty.sum()),
        G=ds.G,
    )


def _subset_statistics(kern: _SubsampleKernel, subsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (delta_b, sigma_b) for an (n, b) array of cluster indices."""
    scale = kern.G / subsets.shape[1]
    delta = scale * kern.proj_xty[subsets].sum(axis=1)
    theta = scale * (kern.xty[subsets].sum(axis=1) @ kern.gram_inverse.T)
    proj_scores = kern.proj_xty[subsets] - np.einsum(
        "nbd,nd->nb", kern.proj_xtx[subsets], theta
    )
    sigma = scale * np.sqrt(np.einsum("nb,nb->n", proj_scores, proj_scores))
    return delta, sigma


def score_subsample_statistic(
    ds: ClusteredDataset,
    fit_full: RegressionFit,
    c: LinearContrast,
    subset,
) -> tuple[float, float]:
    """(delta_b, sigma_b) for one explicit subset of cluster indices.

    The Gram inverse is always the full-sample one; it is never recomputed
    on the subset. Raises ZeroSigma when the subset scale estimate vanishes.
    """
    idx = np.asarray(subset, dtype=np.intp).ravel()
    if idx.size < 2:
        raise ParameterError("subset must contain at least 2 clusters")
    if np.unique(idx).size != idx.size:
        raise ParameterError("subset indices must be distinct")
    if idx.min() < 0 or idx.max() >= ds.G:
        raise ParameterError("subset indices out of range")
    kern = _kernel(ds, fit_full, c)
    delta, sigma = _subset_statistics(kern, idx[None, :])
    if sigma[0] == 0.0:
        raise ZeroSigma("subset produced a zero scale estimate")
    return float(delta[0]), float(sigma[0])


def _draw_subsets(G: int, b: int, M: int, seed: int) -> np.ndarray:
    # Subsets themselves are drawn with replacement across j; indices within
    # one subset are distinct. Stream depends on (seed, b) so block-size
    # selection and the final interval see identical draws per b.
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
    keys = rng.random((M, G))
    return np.argpartition(keys, b - 1, axis=1)[:, :b]


def build_subsampling_distribution(
    ds: ClusteredDataset,
    c: LinearContrast,
    b: int,
    M: int = 1000,
    seed: int = 0,
    mode: str = "auto",
    fit: RegressionFit | None = None,
) -> SubsamplingDistribution:
    """Empirical distribution of (delta_b - delta_full)/sigma_b over M subsets.

    ``mode="auto"`` switches to exhaustive enumeration of all C(G, b) subsets
    when that count is at most ENUMERATION_LIMIT; "sample" and "enumerate"
    force either behavior. Degenerate draws (sigma_b = 0 or non-finite) are
    excluded and counted; more than 50% degenerate is an error.
    """
    G = ds.G
    if not (2 <= b < G):
        raise ParameterError(f"b must satisfy 2 <= b < G, got b={b}, G={G}")
    if M < 1:
        raise ParameterError("M must be at least 1")
    if mode not in ("auto", "sample", "enumerate"):
        raise ParameterError(f"unknown mode {mode!r}")
    if fit is None:
        fit = fit_ols(ds)
    kern = _kernel(ds, fit, c)

    n_atoms = math.comb(G, b)
    enumerated = mode == "enumerate" or (mode == "auto" and n_atoms <= ENUMERATION_LIMIT)
    if enumerated:
        if n_atoms > ENUMERATION_LIMIT:
            raise ParameterError(
                f"C({G},{b}) = {n_atoms} subsets is too many to enumerate"
            )
        subsets = np.fromiter(
            itertools.chain.from_iterable(itertools.combinations(range(G), b)),
            dtype=np.intp,
            count=n_atoms * b,
        ).reshape(n_atoms, b)
    else:
        subsets = _draw_subsets(G, b, M, seed)

    delta, sigma = _subset_statistics(kern, subsets)
    stats = (delta - kern.delta_full) / sigma
    keep = np.isfinite(stats) & (sigma > 0.0)
    n_degenerate = int(stats.size - keep.sum())
    if n_degenerate * 2 > stats.size:
        raise TooManyDegenerateDraws(
            f"{n_degenerate} of {stats.size} subsample draws were degenerate"
        )
    draws = np.sort(stats[keep])
    return SubsamplingDistribution(
        draws=draws,
        b=b,
        M=draws.size,
        seed=seed,
        n_degenerate=n_degenerate,
        enumerated=enumerated,
    )


def critical_value(dist: SubsamplingDistribution, q: float) -> float:
    """Left-continuous empirical quantile inf{t : L(t) >= q}.

    When q lands exactly on a CDF step the lower draw is returned.
    """
    if not (0.0 < q <= 1.0):
        raise ParameterError("q must lie in (0, 1]")
    if dist.M == 0:
        raise ParameterError("empty subsampling distribution")
    # smallest i with i/M >= q, guarded against floating-point overshoot
    i = math.ceil(q * dist.M - 1e-9)
    i = min(max(i, 1), dist.M)
    return float(dist.draws[i - 1])


def critical_values(dist: SubsamplingDistribution, level: float) -> CriticalValues:
    """Equal-tailed pair (c(level/2), c(1 - level/2))."""
    if not (0.0 < level < 1.0):
        raise ParameterError("level must lie in (0, 1)")
    return CriticalValues(
        lower=critical_value(dist, level / 2.0),
        upper=critical_value(dist, 1.0 - level / 2.0),
        level=level,
    )


def default_b_grid(G: int, k: int = 2) -> tuple[int, int, int]:
    """(b_small, b_big, k) used when no grid is supplied."""
    b_small = max(4, math.ceil(G**0.4))
    b_big = G // 2
    return b_small, b_big, k


def volatility_indices(values, k: int) -> np.ndarray:
    """Standard deviation of each sliding window of 2k+1 consecutive values."""
    values = np.asarray(values, dtype=np.float64)
    if k < 1 or values.size < 2 * k + 1:
        raise InvalidGrid("need at least 2k+1 critical values for the volatility window")
    windows = np.lib.stride_tricks.sliding_window_view(values, 2 * k + 1)
    return windows.std(axis=1)


def select_b_min_volatility(
    ds: ClusteredDataset,
    c: LinearContrast,
    a: float = 0.025,
    b_small: int | None = None,
    b_big: int | None = None,
    k: int = 2,
    M: int = 1000,
    seed: int = 0,
    fit: RegressionFit | None = None,
) -> tuple[int, list[tuple[int, float]]]:
    """Minimum-volatility choice of the subsample size b.

    Computes the critical value c_{G,b}(1-a) on the grid [b_small, b_big],
    scores each interior b by the standard deviation of the critical values
    over the window b-k..b+k, and returns the b with the smallest volatility
    index (ties broken toward smaller b) plus the (b, VI_b) table.
    """
    G = ds.G
    if b_small is None or b_big is None:
        d_small, d_big, _ = default_b_grid(G, k)
        b_small = d_small if b_small is None else b_small
        b_big = d_big if b_big is None else b_big
    if b_small < 2 or b_big >= G or b_small + k > b_big - k:
        raise InvalidGrid(
            f"grid [{b_small}, {b_big}] with k={k} is invalid for G={G}"
        )
    if fit is None:
        fit = fit_ols(ds)
    grid = list(range(b_small, b_big + 1))
    cvals = [
        critical_value(
            build_subsampling_distribution(ds, c, b, M=M, seed=seed, fit=fit), 1.0 - a
        )
        for b in grid
    ]
    vi = volatility_indices(cvals, k)
    centers = grid[k : len(grid) - k]
    best = int(np.argmin(vi))  # argmin returns the first, i.e. smallest, b on ties
    return centers[best], list(zip(centers, (float(v) for v in vi)))


def confidence_interval(
    ds: ClusteredDataset,
    c: LinearContrast,
    b: int | str = "auto",
    M: int = 1000,
    level: float = 0.05,
    seed: int = 0,
    a1: float | None = None,
    a2: float | None = None,
) -> tuple[float, float]:
    """Test-inversion confidence interval for r'theta from score subsampling.

    Equal-tailed by default: [delta - sigma*c(1-level/2), delta - sigma*c(level/2)]
    with sigma the full-sample cluster-robust standard error. One-sided tail
    masses can be set explicitly through (a1, a2); b="auto" runs the
    minimum-volatility selection first.
    """
    if a1 is None and a2 is None:
        if not (0.0 < level < 1.0):
            raise ParameterError("level must lie in (0, 1)")
        a1 = a2 = level / 2.0
    elif a1 is None or a2 is None:
        raise ParameterError("supply both a1 and a2 or neither")
    if a1 < 0 or a2 < 0 or a1 + a2 >= 1.0 or a1 + a2 <= 0.0:
        raise ParameterError("tail masses must satisfy 0 < a1 + a2 < 1")
    fit = fit_ols(ds)
    sigma = standard_error(cr_variance(fit), c)
    delta = float(c.r @ fit.theta_hat)
    if b == "auto":
        b, _ = select_b_min_volatility(ds, c, a=max(a1, a2), M=M, seed=seed, fit=fit)
    dist = build_subsampling_distribution(ds, c, int(b), M=M, seed=seed, fit=fit)
    lo = delta - sigma * critical_value(dist, 1.0 - a2) if a2 > 0 else -math.inf
    hi = delta - sigma * critical_value(dist, a1) if a1 > 0 else math.inf
    return lo, hi


# --- bootstrap baselines ---


def _pairs_statistics(
    cp_xtx: np.ndarray, cp_xty: np.ndarray, r: np.ndarray, delta_full: float,
    indices: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """(statistic, valid mask) for an (n, G) array of resampled cluster indices.

    A resample with fewer than two distinct clusters is degenerate by
    construction (its cluster-robust variance is identically zero), so it is
    marked invalid before any numerics run.
    """
    grams = cp_xtx[indices].sum(axis=1)
    rhs = cp_xty[indices].sum(axis=1)
    conds = np.linalg.cond(grams)
    valid = np.isfinite(conds) & (conds < COND_LIMIT)
    valid &= indices.min(axis=1) != indices.max(axis=1)
    safe = np.where(valid[:, None, None], grams, np.eye(grams.shape[1])[None])
    theta = np.linalg.solve(safe, rhs[..., None])[..., 0]
    w = np.linalg.solve(safe, np.broadcast_to(r, rhs.shape)[..., None])[..., 0]
    scores = cp_xty[indices] - np.einsum("ngij,nj->ngi", cp_xtx[indices], theta)
    proj = np.einsum("ngi,ni->ng", scores, w)
    sigma2 = np.einsum("ng,ng->n", proj, proj)
    with np.errstate(divide="ignore", invalid="ignore"):
        stats = (theta @ r - delta_full) / np.sqrt(sigma2)
    valid &= np.isfinite(stats) & (sigma2 > 0.0)
    return stats, valid


def pairs_resample_statistic(ds: ClusteredDataset, c: LinearContrast, indices) -> float:
    """(delta* - delta)/sigma* for one explicit resample multiset of clusters."""
    idx = np.asarray(indices, dtype=np.intp).ravel()
    if idx.size != ds.G or idx.min() < 0 or idx.max() >= ds.G:
        raise ParameterError("resample must list G cluster indices in range")
    fit = fit_ols(ds)
    cp = cross_products(ds)
    stats, valid = _pairs_statistics(
        cp.xtx, cp.xty, c.r, float(c.r @ fit.theta_hat), idx[None, :]
    )
    if not valid[0]:
        raise ZeroSigma("the requested resample is singular or degenerate")
    return float(stats[0])


def pairs_cluster_bootstrap(
    ds: ClusteredDataset,
    c: LinearContrast,
    B: int = 399,
    seed: int = 0,
    mode: str = "auto",
) -> BootstrapResult:
    """Pairs cluster bootstrap of the t-statistic (inconsistent baseline).

    Resamples G clusters with replacement and refits OLS per draw. Singular
    or zero-scale resamples are skipped and counted; more than 20% skipped is
    an error. In enumeration mode all multisets are visited once and weighted
    by their multinomial probability.
    """
    if B < 1:
        raise ParameterError("B must be at least 1")
    if mode not in ("auto", "sample", "enumerate"):
        raise ParameterError(f"unknown mode {mode!r}")
    G = ds.G
    fit = fit_ols(ds)
    cp = cross_products(ds)
    delta_full = float(c.r @ fit.theta_hat)

    n_multisets = math.comb(2 * G - 1, G)
    enumerated = mode == "enumerate" or (mode == "auto" and n_multisets <= ENUMERATION_LIMIT)
    weights = None
    if enumerated:
        if n_multisets > ENUMERATION_LIMIT:
            raise ParameterError(f"{n_multisets} multisets is too many to enumerate")
        atoms = list(itertools.combinations_with_replacement(range(G), G))
        indices = np.array(atoms, dtype=np.intp)
        total = float(G**G)
        weights = np.array(
            [_multiset_count(atom, G) / total for atom in atoms], dtype=np.float64
        )
    else:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        indices = rng.integers(0, G, size=(B, G))

    stats, valid = _pairs_statistics(cp.xtx, cp.xty, c.r, delta_full, indices)
    n_requested = indices.shape[0]
    n_skipped = int(n_requested - valid.sum())
    if not enumerated and n_skipped * 5 > n_requested:
        raise TooManySingularResamples(
            f"{n_skipped} of {n_requested} bootstrap resamples were singular"
        )
    if enumerated:
        kept = weights[valid]
        weights = kept / kept.sum() if kept.sum() > 0 else kept
    return BootstrapResult(
        statistics=stats[valid],
        method=PAIRS,
        n_requested=n_requested,
        n_skipped=n_skipped,
        weights=weights,
        seed=seed,
    )


def _multiset_count(atom: tuple[int, ...], G: int) -> float:
    count = math.factorial(G)
    for repeats in _run_lengths(atom):
        count //= math.factorial(repeats)
    return float(count)


def _run_lengths(sorted_atom: tuple[int, ...]):
    run = 1
    for prev, cur in zip(sorted_atom, sorted_atom[1:]):
        if cur == prev:
            run += 1
        else:
            yield run
            run = 1
    yield run


@dataclass(frozen=True)
class _WildPrep:
    restricted_theta: np.ndarray
    restricted_scores: np.ndarray  # (G, d) X_g'(Y_g - X_g theta_restricted)
    proj_restricted: np.ndarray  # (G,)  w'S^r_g
    proj_xtx: np.ndarray  # (G, d) X_g'X_g w
    gram_inverse: np.ndarray
    w: np.ndarray  # Ainv r


def _wild_prep(ds: ClusteredDataset, c: LinearContrast) -> _WildPrep:
    fit = fit_ols(ds)
    cp = cross_products(ds)
    ainv_r = fit.gram_inverse @ c.r
    # least squares restricted to r'theta = delta_null
    gap = float(c.r @ fit.theta_hat) - c.delta_null
    restricted = fit.theta_hat - ainv_r * (gap / float(c.r @ ainv_r))
    scores_r = cp.xty - np.einsum("gij,j->gi", cp.xtx, restricted)
    return _WildPrep(
        restricted_theta=restricted,
        restricted_scores=scores_r,
        proj_restricted=scores_r @ ainv_r,
        proj_xtx=cp.xtx @ ainv_r,
        gram_inverse=fit.gram_inverse,
        w=ainv_r,
    )


def _wild_statistics(prep: _WildPrep, signs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Null-imposed wild statistics for an (n, G) array of +-1 sign vectors.

    Bootstrap responses are X theta_restricted + v_g * restricted residuals;
    the score of the resampled data at the per-draw OLS coefficient is
    v_g S^r_g - X_g'X_g (theta* - theta_restricted), whose contrast projection
    feeds the same sandwich form as the original statistic.
    """
    dtheta_proj = signs @ prep.proj_restricted  # r'(theta* - theta_restricted)
    dtheta = (signs @ prep.restricted_scores) @ prep.gram_inverse.T
    proj_scores = signs * prep.proj_restricted[None, :] - dtheta @ prep.proj_xtx.T
    sigma2 = np.einsum("ng,ng->n", proj_scores, proj_scores)
    with np.errstate(divide="ignore", invalid="ignore"):
        stats = dtheta_proj / np.sqrt(sigma2)
    valid = np.isfinite(stats) & (sigma2 > 0.0)
    return stats, valid


def wild_bootstrap_statistic(ds: ClusteredDataset, c: LinearContrast, signs) -> float:
    """T* for one explicit Rademacher sign vector (null imposed at delta_null)."""
    v = np.asarray(signs, dtype=np.float64).ravel()
    if v.size != ds.G or not np.all(np.abs(v) == 1.0):
        raise ParameterError("signs must be a length-G vector of +-1")
    stats, valid = _wild_statistics(_wild_prep(ds, c), v[None, :])
    if not valid[0]:
        raise ZeroDenominator("wild bootstrap denominator vanished for this sign vector")
    return float(stats[0])


def wild_cluster_bootstrap(
    ds: ClusteredDataset,
    c: LinearContrast,
    B: int = 399,
    seed: int = 0,
    mode: str = "auto",
) -> BootstrapResult:
    """Null-imposed wild cluster bootstrap with Rademacher weights (baseline).

    Draws with a zero denominator are flagged, excluded and counted. In
    enumeration mode all 2^G sign vectors are visited in itertools.product
    order (the all +1 vector first), each equally likely.
    """
    if B < 1:
        raise ParameterError("B must be at least 1")
    if mode not in ("auto", "sample", "enumerate"):
        raise ParameterError(f"unknown mode {mode!r}")
    G = ds.G
    prep = _wild_prep(ds, c)

    n_atoms = 2**G if G <= 30 else math.inf
    enumerated = mode == "enumerate" or (mode == "auto" and n_atoms <= ENUMERATION_LIMIT)
    if enumerated:
        if n_atoms > ENUMERATION_LIMIT:
            raise ParameterError(f"2^{G} sign vectors is too many to enumerate")
        signs = np.array(
            list(itertools.product((1.0, -1.0), repeat=G)), dtype=np.float64
        )
    else:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        signs = np.where(rng.random((B, G)) < 0.5, 1.0, -1.0)

    stats, valid = _wild_statistics(prep, signs)
    n_requested = signs.shape[0]
    n_skipped = int(n_requested - valid.sum())
    return BootstrapResult(
        statistics=stats[valid],
        method=WILD_RADEMACHER,
        n_requested=n_requested,
        n_skipped=n_skipped,
        weights=None,
        seed=seed,
    )


def bootstrap_quantile(result: BootstrapResult, q: float) -> float:
    """Left-continuous quantile of the (possibly weighted) bootstrap draws."""
    if not (0.0 < q <= 1.0):
        raise ParameterError("q must lie in (0, 1]")
    if result.statistics.size == 0:
        raise ParameterError("empty bootstrap distribution")
    order = np.argsort(result.statistics, kind="stable")
    sorted_stats = result.statistics[order]
    if result.weights is None:
        i = math.ceil(q * sorted_stats.size - 1e-9)
        i = min(max(i, 1), sorted_stats.size)
        return float(sorted_stats[i - 1])
    cum = np.cumsum(result.weights[order])
    cum /= cum[-1]
    i = int(np.searchsorted(cum, q - 1e-12, side="left"))
    return float(sorted_stats[min(i, sorted_stats.size - 1)])
