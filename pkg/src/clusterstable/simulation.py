"""Clustered data-generating processes and the Monte Carlo harness.

The design is a cluster treatment model: cluster sizes are drawn as
``N_g = ceil(size_scale * Pareto(1, alpha))`` by inverse CDF, a fixed count
``ceil(treat_fraction * G)`` of clusters is treated, within-cluster latent
normals are equicorrelated with a single common factor, covariates pass the
latents through ``0.2 * BetaInv(2,2)(Phi(.))``, and errors are scaled by
``error_sd_control`` or ``error_sd_treated`` depending on treatment status.
The harness evaluates confidence-interval coverage, rejection under the true
null, and coefficient MSE for each requested method on shared datasets with
scheduler-independent RNG streams.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import betaincinv, ndtr, ndtri

from .data import Cluster, ClusteredDataset
from .errors import (
    ClusterStableError,
    GiantCluster,
    ParameterError,
    TooManyDegenerateReplications,
)
from .estimators import (
    LinearContrast,
    cr1_factor,
    cr_variance,
    fit_ols,
    fit_sacr,
    jackknife_variance,
    sacr_variance,
)
from .resampling import (
    bootstrap_quantile,
    build_subsampling_distribution,
    critical_values,
    pairs_cluster_bootstrap,
    select_b_min_volatility,
    wild_cluster_bootstrap,
)

MAX_CLUSTER_SIZE = 10_000_000

METHODS = ("CR", "JACK", "SACR", "SACR_JACK", "SUB", "WCB", "PAIRS")

# Stable per-method RNG stream ids; stream 0 is the dataset draw. Keyed by
# tag, not by position in the requested method list, so evaluation order
# never changes any method's result.
_STREAM_IDS = {tag: i + 1 for i, tag in enumerate(METHODS)}

QQ_STATISTICS = ("CR", "JACK", "SACR", "SACR_JACK")


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of the simulated cluster treatment design."""

    G: int
    alpha: float
    size_scale: float = 1.0
    K: int = 0
    rho: float = 0.5
    theta: tuple[float, ...] | None = None
    treat_fraction: float = 0.2
    error_sd_control: float = 0.2
    error_sd_treated: float = 1.0

    def __post_init__(self):
        if self.G < 2:
            raise ParameterError("G must be at least 2")
        if self.alpha <= 0:
            raise ParameterError("alpha must be positive")
        if self.size_scale <= 0:
            raise ParameterError("size_scale must be positive")
        if self.K < 0:
            raise ParameterError("K must be non-negative")
        if not (0.0 <= self.rho < 1.0):
            raise ParameterError("rho must lie in [0, 1)")
        if not (0.0 < self.treat_fraction < 1.0):
            raise ParameterError("treat_fraction must lie in (0, 1)")
        if self.error_sd_control < 0 or self.error_sd_treated < 0:
            raise ParameterError("error standard deviations must be non-negative")
        theta = self.theta
        if theta is None:
            theta = tuple(1.0 for _ in range(self.K + 2))
        else:
            theta = tuple(float(v) for v in theta)
            if len(theta) != self.K + 2:
                raise ParameterError(f"theta must have length K + 2 = {self.K + 2}")
        object.__setattr__(self, "theta", theta)
        if self.n_treated >= self.G:
            raise ParameterError("treat_fraction leaves no control clusters")

    @property
    def n_treated(self) -> int:
        return math.ceil(self.treat_fraction * self.G)

    @property
    def dim_theta(self) -> int:
        return self.K + 2


def _contrast_se(v, contrast) -> float:
    # non-raising variant of estimators.standard_error for harness internals:
    # the zero-noise design legitimately produces a zero standard error
    variance = float(contrast.r @ v.matrix @ contrast.r)
    return math.sqrt(variance) if variance > 0.0 else 0.0


def equicorrelated_normal(rng: np.random.Generator, n: int, rho: float) -> np.ndarray:
    """n-variate standard normal with pairwise correlation rho, via one common factor."""
    common = rng.standard_normal()
    idiosyncratic = rng.standard_normal(n)
    return math.sqrt(rho) * common + math.sqrt(1.0 - rho) * idiosyncratic


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def draw_dataset(
    cfg: DgpConfig, seed, max_cluster_size: int = MAX_CLUSTER_SIZE
) -> ClusteredDataset:
    """Draw one dataset from the cluster treatment design.

    Draw order is fixed (sizes, treatment assignment, then per cluster the K
    covariate latents followed by the error latent), so a given seed always
    produces the same dataset. Cluster sizes beyond ``max_cluster_size``
    raise GiantCluster; the harness counts those replications instead of
    exhausting memory, since sizes have infinite mean when alpha <= 1.
    """
    rng = _as_rng(seed)
    G, K = cfg.G, cfg.K
    u = 1.0 - rng.random(G)  # uniform on (0, 1]
    sizes = np.ceil(cfg.size_scale * u ** (-1.0 / cfg.alpha)).astype(np.int64)
    if sizes.max() > max_cluster_size:
        raise GiantCluster(int(sizes.max()), max_cluster_size)
    treated = np.zeros(G, dtype=bool)
    treated[rng.choice(G, size=cfg.n_treated, replace=False)] = True

    theta = np.asarray(cfg.theta)
    clusters = []
    for g in range(G):
        n = int(sizes[g])
        X = np.empty((n, cfg.dim_theta))
        X[:, 0] = 1.0
        X[:, 1] = 1.0 if treated[g] else 0.0
        for j in range(K):
            latent = equicorrelated_normal(rng, n, cfg.rho)
            X[:, 2 + j] = 0.2 * betaincinv(2.0, 2.0, ndtr(latent))
        sd = cfg.error_sd_treated if treated[g] else cfg.error_sd_control
        errors = sd * equicorrelated_normal(rng, n, cfg.rho)
        Y = X @ theta + errors
        clusters.append(Cluster(id=f"c{g + 1}", X=X, Y=Y))
    return ClusteredDataset.from_clusters(clusters)


@dataclass(frozen=True)
class McSettings:
    """Tuning knobs for the Monte Carlo methods."""

    sub_b: int | str = "auto"  # fixed subsample size or "auto" min-volatility
    sub_M: int = 1000
    bootstrap_B: int = 399
    use_cr1: bool = False  # apply the CR1-style finite-sample factor


@dataclass(frozen=True)
class MethodRow:
    method: str
    coverage: float
    rejection: float
    mse: float
    n_evaluated: int
    n_degenerate: int


@dataclass(frozen=True)
class MonteCarloReport:
    rows: tuple[MethodRow, ...]
    meta: dict = field(default_factory=dict)


def _derived_seed(seed: int, rep: int, stream: int) -> int:
    return int(
        np.random.SeedSequence(seed, spawn_key=(rep, stream)).generate_state(
            1, np.uint64
        )[0]
    )


def _run_replication(
    cfg: DgpConfig,
    methods: Sequence[str],
    level: float,
    seed: int,
    rep: int,
    settings: McSettings,
) -> dict:
    record: dict = {
        "rep": rep,
        "giant": False,
        "methods": {},
        "mse_ols": None,
        "mse_sacr": None,
    }
    try:
        ds = draw_dataset(cfg, np.random.SeedSequence(seed, spawn_key=(rep, 0)))
    except GiantCluster:
        record["giant"] = True
        return record

    delta_true = cfg.theta[1]
    r = np.zeros(cfg.dim_theta)
    r[1] = 1.0
    contrast = LinearContrast(r=r, delta_null=delta_true)
    z = float(ndtri(1.0 - level / 2.0))
    a_G = cr1_factor(ds.G, ds.N, ds.dim_theta) if settings.use_cr1 else 1.0

    # both fits are attempted regardless of the method list since every
    # report row carries its estimator's MSE
    try:
        fit = fit_ols(ds)
        record["mse_ols"] = (float(fit.theta_hat[1]) - delta_true) ** 2
    except ClusterStableError:
        fit = None
    try:
        sacr_fit = fit_sacr(ds)
        record["mse_sacr"] = (float(sacr_fit.theta_hat[1]) - delta_true) ** 2
    except ClusterStableError:
        sacr_fit = None

    def normal_test(theta1: float, se: float) -> tuple[bool, bool]:
        if se == 0.0:
            # exact-fit degenerate case: the interval collapses to a point
            rejected = theta1 != delta_true
        else:
            rejected = abs((theta1 - delta_true) / se) > z
        return (not rejected, rejected)

    for tag in methods:
        outcome = None
        try:
            if tag == "CR":
                if fit is None:
                    raise ClusterStableError("ols fit unavailable")
                se = _contrast_se(cr_variance(fit, a_G=a_G), contrast)
                outcome = normal_test(float(fit.theta_hat[1]), se)
            elif tag == "JACK":
                if fit is None:
                    raise ClusterStableError("ols fit unavailable")
                se = _contrast_se(jackknife_variance(ds, "ols"), contrast)
                outcome = normal_test(float(fit.theta_hat[1]), se)
            elif tag == "SACR":
                if sacr_fit is None:
                    raise ClusterStableError("sacr fit unavailable")
                se = _contrast_se(sacr_variance(sacr_fit, a_G=a_G), contrast)
                outcome = normal_test(float(sacr_fit.theta_hat[1]), se)
            elif tag == "SACR_JACK":
                if sacr_fit is None:
                    raise ClusterStableError("sacr fit unavailable")
                se = _contrast_se(jackknife_variance(ds, "sacr"), contrast)
                outcome = normal_test(float(sacr_fit.theta_hat[1]), se)
            elif tag == "SUB":
                if fit is None:
                    raise ClusterStableError("ols fit unavailable")
                sub_seed = _derived_seed(seed, rep, _STREAM_IDS["SUB"])
                if settings.sub_b == "auto":
                    b, _ = select_b_min_volatility(
                        ds, contrast, a=level / 2.0, M=settings.sub_M,
                        seed=sub_seed, fit=fit,
                    )
                else:
                    b = int(settings.sub_b)
                dist = build_subsampling_distribution(
                    ds, contrast, b, M=settings.sub_M, seed=sub_seed, fit=fit
                )
                cv = critical_values(dist, level)
                sigma = _contrast_se(cr_variance(fit), contrast)
                if sigma == 0.0:
                    raise ClusterStableError("zero full-sample standard error")
                t = (float(fit.theta_hat[1]) - delta_true) / sigma
                covered = cv.lower <= t <= cv.upper
                outcome = (covered, not covered)
            elif tag == "WCB":
                if fit is None:
                    raise ClusterStableError("ols fit unavailable")
                boot = wild_cluster_bootstrap(
                    ds, contrast, B=settings.bootstrap_B,
                    seed=_derived_seed(seed, rep, _STREAM_IDS["WCB"]),
                )
                sigma = _contrast_se(cr_variance(fit), contrast)
                if sigma == 0.0:
                    raise ClusterStableError("zero full-sample standard error")
                t = (float(fit.theta_hat[1]) - delta_true) / sigma
                covered = (
                    bootstrap_quantile(boot, level / 2.0)
                    <= t
                    <= bootstrap_quantile(boot, 1.0 - level / 2.0)
                )
                outcome = (covered, not covered)
            elif tag == "PAIRS":
                if fit is None:
                    raise ClusterStableError("ols fit unavailable")
                boot = pairs_cluster_bootstrap(
                    ds, contrast, B=settings.bootstrap_B,
                    seed=_derived_seed(seed, rep, _STREAM_IDS["PAIRS"]),
                )
                sigma = _contrast_se(cr_variance(fit), contrast)
                if sigma == 0.0:
                    raise ClusterStableError("zero full-sample standard error")
                t = (float(fit.theta_hat[1]) - delta_true) / sigma
                covered = (
                    bootstrap_quantile(boot, level / 2.0)
                    <= t
                    <= bootstrap_quantile(boot, 1.0 - level / 2.0)
                )
                outcome = (covered, not covered)
            else:
                raise ParameterError(f"unknown method tag {tag!r}")
        except ParameterError:
            raise
        except ClusterStableError:
            outcome = None
        record["methods"][tag] = outcome
    return record


def _replication_batch(args) -> list[dict]:
    cfg, methods, level, seed, reps, settings = args
    return [
        _run_replication(cfg, methods, level, seed, rep, settings) for rep in reps
    ]


def run_monte_carlo(
    cfg: DgpConfig,
    methods: Sequence[str],
    replications: int,
    level: float = 0.05,
    seed: int = 0,
    threads: int = 1,
    settings: McSettings | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> MonteCarloReport:
    """Coverage / rejection / MSE study over fresh datasets per replication.

    Every replication r derives its RNG streams from (seed, r, stream id),
    so results are identical for any thread count and any method ordering.
    Replications where the dataset draw or every requested method fails are
    counted as degenerate; more than 10% of them is an error.
    """
    methods = list(dict.fromkeys(methods))
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ParameterError(f"unknown methods: {unknown}; valid tags are {METHODS}")
    if not methods:
        raise ParameterError("at least one method is required")
    if replications < 1:
        raise ParameterError("replications must be at least 1")
    if not (0.0 < level < 1.0):
        raise ParameterError("level must lie in (0, 1)")
    settings = settings or McSettings()

    start = time.perf_counter()
    reps = list(range(replications))
    if threads <= 1:
        records = []
        for rep in reps:
            records.append(_run_replication(cfg, methods, level, seed, rep, settings))
            if progress and (rep + 1) % max(1, replications // 20) == 0:
                progress(rep + 1, replications)
    else:
        chunks = [
            reps[i::threads] for i in range(threads)
        ]  # any split works, streams are index-derived
        with ProcessPoolExecutor(max_workers=threads) as pool:
            batches = list(
                pool.map(
                    _replication_batch,
                    [(cfg, methods, level, seed, chunk, settings) for chunk in chunks],
                )
            )
        records = [rec for batch in batches for rec in batch]
        records.sort(key=lambda rec: rec["rep"])
        if progress:
            progress(replications, replications)

    giant_events = sum(rec["giant"] for rec in records)
    failed = 0
    for rec in records:
        outcomes = rec["methods"]
        if rec["giant"] or (outcomes and all(v is None for v in outcomes.values())):
            failed += 1

    rows = []
    for tag in methods:
        covered = [rec["methods"].get(tag) for rec in records if not rec["giant"]]
        valid = [o for o in covered if o is not None]
        n_eval = len(valid)
        n_degenerate = replications - n_eval
        mse_key = "mse_sacr" if tag in ("SACR", "SACR_JACK") else "mse_ols"
        mses = np.array(
            [rec[mse_key] for rec in records if rec[mse_key] is not None]
        )
        rows.append(
            MethodRow(
                method=tag,
                coverage=float(np.mean([o[0] for o in valid])) if valid else math.nan,
                rejection=float(np.mean([o[1] for o in valid])) if valid else math.nan,
                mse=float(mses.mean()) if mses.size else math.nan,
                n_evaluated=n_eval,
                n_degenerate=n_degenerate,
            )
        )

    meta = {
        "replications": replications,
        "level": level,
        "seed": seed,
        "methods": methods,
        "dgp": {
            "G": cfg.G,
            "alpha": cfg.alpha,
            "size_scale": cfg.size_scale,
            "K": cfg.K,
            "rho": cfg.rho,
            "theta": list(cfg.theta),
            "treat_fraction": cfg.treat_fraction,
            "error_sd_control": cfg.error_sd_control,
            "error_sd_treated": cfg.error_sd_treated,
        },
        "settings": {
            "sub_b": settings.sub_b,
            "sub_M": settings.sub_M,
            "bootstrap_B": settings.bootstrap_B,
            "use_cr1": settings.use_cr1,
        },
        "giant_cluster_events": int(giant_events),
        "failed_replications": int(failed),
        "wall_time_seconds": time.perf_counter() - start,
    }
    if failed * 10 > replications:
        raise TooManyDegenerateReplications(
            f"{failed} of {replications} replications failed"
        )
    return MonteCarloReport(rows=tuple(rows), meta=meta)


def qq_data(
    cfg: DgpConfig,
    statistic: str,
    replications: int,
    seed: int = 0,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Paired (standard normal, empirical) quantiles of a self-normalized statistic.

    Statistic tags: CR, JACK (CR jackknife), SACR, SACR_JACK. Plotting
    positions are (i - 0.5)/n on the sorted statistics.
    """
    if statistic not in QQ_STATISTICS:
        raise ParameterError(
            f"unknown statistic {statistic!r}; valid tags are {QQ_STATISTICS}"
        )
    if replications < 100:
        raise ParameterError("qq_data needs at least 100 replications")
    stats = _collect_statistics(cfg, statistic, replications, seed, threads)
    empirical = np.sort(stats)
    n = empirical.size
    theoretical = ndtri((np.arange(1, n + 1) - 0.5) / n)
    return theoretical, empirical


def _statistic_batch(args) -> list[tuple[int, float]]:
    cfg, statistic, seed, reps = args
    out = []
    for rep in reps:
        value = _one_statistic(cfg, statistic, seed, rep)
        if value is not None:
            out.append((rep, value))
    return out


def _one_statistic(cfg: DgpConfig, statistic: str, seed: int, rep: int) -> float | None:
    try:
        ds = draw_dataset(cfg, np.random.SeedSequence(seed, spawn_key=(rep, 0)))
        delta_true = cfg.theta[1]
        if statistic in ("CR", "JACK"):
            fit = fit_ols(ds)
            theta1 = float(fit.theta_hat[1])
            v = cr_variance(fit) if statistic == "CR" else jackknife_variance(ds, "ols")
        else:
            fit = fit_sacr(ds)
            theta1 = float(fit.theta_hat[1])
            v = (
                sacr_variance(fit)
                if statistic == "SACR"
                else jackknife_variance(ds, "sacr")
            )
        se = math.sqrt(float(v.matrix[1, 1]))
        if se <= 0 or not math.isfinite(se):
            return None
        return (theta1 - delta_true) / se
    except ClusterStableError:
        return None


def _collect_statistics(
    cfg: DgpConfig, statistic: str, replications: int, seed: int, threads: int
) -> np.ndarray:
    reps = list(range(replications))
    if threads <= 1:
        pairs = _statistic_batch((cfg, statistic, seed, reps))
    else:
        chunks = [reps[i::threads] for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            batches = list(
                pool.map(
                    _statistic_batch,
                    [(cfg, statistic, seed, chunk) for chunk in chunks],
                )
            )
        pairs = [p for batch in batches for p in batch]
    pairs.sort(key=lambda item: item[0])
    return np.array([v for _, v in pairs], dtype=np.float64)


# --- report serialization ---


def write_report_csv(report: MonteCarloReport, path: str | Path) -> None:
    """One row per method; float fields use repr for byte-stable reruns."""
    lines = ["method,coverage,rejection,mse,n_evaluated,n_degenerate"]
    for row in report.rows:
        lines.append(
            ",".join(
                [
                    row.method,
                    repr(row.coverage),
                    repr(row.rejection),
                    repr(row.mse),
                    str(row.n_evaluated),
                    str(row.n_degenerate),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def report_json_dict(report: MonteCarloReport) -> dict:
    """JSON-ready report. Wall time is deliberately excluded so that reruns
    with the same seed produce byte-identical files."""
    meta = {k: v for k, v in report.meta.items() if k != "wall_time_seconds"}
    return {
        "schema_version": 1,
        "meta": meta,
        "rows": [
            {
                "method": row.method,
                "coverage": row.coverage,
                "rejection": row.rejection,
                "mse": row.mse,
                "n_evaluated": row.n_evaluated,
                "n_degenerate": row.n_degenerate,
            }
            for row in report.rows
        ],
    }


def write_report_json(report: MonteCarloReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report_json_dict(report), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def write_qq_csv(path: str | Path, theoretical: np.ndarray, empirical: np.ndarray) -> None:
    lines = ["theoretical,empirical"]
    for t, e in zip(theoretical, empirical):
        lines.append(f"{t!r},{e!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
