"""Single-binary command line front end.

Subcommands: fit, diagnose, subsample, limitdist, simulate, montecarlo.
Exit codes: 0 success, 2 input/config error, 3 numerical/degeneracy failure.
Every seeded command is byte-deterministic in its file outputs; progress goes
to stderr prefixed with '#'.
"""

from __future__ import annotations

import functools
import json
import os
from pathlib import Path

import click
import numpy as np
from scipy.special import ndtri

from . import resampling, simulation, stable
from .data import load_csv, to_csv
from .errors import DataError, NumericalError, ParameterError
from .estimators import (
    LinearContrast,
    cr1_factor,
    cr_variance,
    fit_ols,
    fit_sacr,
    jackknife_variance,
    sacr_variance,
    standard_error,
    t_statistic,
)

SCHEMA_VERSION = 1


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (DataError, ParameterError) as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(2) from exc
        except NumericalError as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(3) from exc

    return wrapper


def _resolve_threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, threads)
    env = os.environ.get("CLUSTERSTABLE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ParameterError(
                f"CLUSTERSTABLE_THREADS must be an integer, got {env!r}"
            ) from None
    return 1


def _echo_json(payload: dict) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


def _progress(message: str) -> None:
    click.echo(f"# {message}", err=True)


def _data_options(fn):
    fn = click.option("--x", "x_cols", multiple=True, help="Regressor column (repeatable).")(fn)
    fn = click.option("--y", "y_col", required=True, help="Response column.")(fn)
    fn = click.option("--cluster", "cluster_col", required=True, help="Cluster id column.")(fn)
    fn = click.option(
        "--no-intercept", is_flag=True, default=False,
        help="Do not prepend an intercept column of ones.",
    )(fn)
    return fn


def _coefficient_names(x_cols, add_intercept: bool) -> list[str]:
    names = list(x_cols)
    return (["const"] + names) if add_intercept else names


def _resolve_contrast(names, contrast, r_spec, delta_null) -> tuple[LinearContrast, str]:
    if contrast and r_spec:
        raise ParameterError("supply either --contrast or --r, not both")
    if r_spec:
        values = [float(v) for v in r_spec.split(",")]
        if len(values) != len(names):
            raise ParameterError(
                f"--r needs {len(names)} comma-separated entries, got {len(values)}"
            )
        return LinearContrast(r=np.array(values), delta_null=delta_null), "custom"
    if contrast is None:
        candidates = [n for n in names if n != "const"]
        if not candidates:
            raise ParameterError("no non-intercept coefficient to use as the default contrast")
        contrast = candidates[0]
    if contrast not in names:
        raise ParameterError(
            f"unknown coefficient {contrast!r}; available: {', '.join(names)}"
        )
    r = np.zeros(len(names))
    r[names.index(contrast)] = 1.0
    return LinearContrast(r=r, delta_null=delta_null), contrast


@click.group()
def main():
    """Cluster-robust inference that survives heavy-tailed cluster sizes."""


@main.command("fit")
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@_data_options
@click.option("--method", type=click.Choice(["ols", "sacr"]), default="ols")
@click.option("--variance", type=click.Choice(["analytic", "jackknife"]), default="analytic")
@click.option("--cr1", is_flag=True, default=False,
              help="Apply the CR1-style finite-sample factor to analytic variances.")
@click.option("--contrast", default=None, help="Coefficient name for the contrast.")
@click.option("--r", "r_spec", default=None, help="Explicit comma-separated contrast vector.")
@click.option("--delta-null", type=float, default=0.0)
@click.option("--level", type=float, default=0.05)
@click.option("--subsample", is_flag=True, default=False,
              help="Also report the score-subsampling confidence interval (OLS only).")
@click.option("--b", "b_spec", default="auto", help="Subsample size or 'auto'.")
@click.option("--m", "-M", "n_subsamples", type=int, default=1000)
@click.option("--seed", type=int, default=0)
@click.option("--json", "as_json", is_flag=True, default=False)
@_guarded
def cmd_fit(data, cluster_col, y_col, x_cols, no_intercept, method, variance, cr1,
            contrast, r_spec, delta_null, level, subsample, b_spec, n_subsamples,
            seed, as_json):
    """Estimate a clustered regression and report inference for one contrast."""
    ds = load_csv(data, cluster_col, y_col, x_cols, add_intercept=not no_intercept)
    names = _coefficient_names(x_cols, not no_intercept)
    con, con_label = _resolve_contrast(names, contrast, r_spec, delta_null)

    a_G = cr1_factor(ds.G, ds.N, ds.dim_theta) if cr1 else 1.0
    if method == "ols":
        fit = fit_ols(ds)
        v = cr_variance(fit, a_G=a_G) if variance == "analytic" else jackknife_variance(ds, "ols")
    else:
        fit = fit_sacr(ds)
        v = sacr_variance(fit, a_G=a_G) if variance == "analytic" else jackknife_variance(ds, "sacr")
    estimate = float(con.r @ fit.theta_hat)
    se = standard_error(v, con)
    t = t_statistic(fit, v, con)
    z = float(ndtri(1.0 - level / 2.0))
    normal_ci = (estimate - z * se, estimate + z * se)

    sub_payload = None
    if subsample:
        if method != "ols":
            raise ParameterError("--subsample applies to the OLS estimator; use --method ols")
        b = b_spec if b_spec == "auto" else int(b_spec)
        if b == "auto":
            b_star, _ = resampling.select_b_min_volatility(
                ds, con, a=level / 2.0, M=n_subsamples, seed=seed, fit=fit
            )
        else:
            b_star = b
        lo, hi = resampling.confidence_interval(
            ds, con, b=b_star, M=n_subsamples, level=level, seed=seed
        )
        sub_payload = {"b": int(b_star), "M": n_subsamples, "seed": seed,
                       "ci": [lo, hi]}

    if as_json:
        _echo_json({
            "schema_version": SCHEMA_VERSION,
            "command": "fit",
            "method": method,
            "variance": v.method,
            "a_G": v.a_G,
            "coefficients": {n: float(c) for n, c in zip(names, fit.theta_hat)},
            "contrast": {"label": con_label, "r": list(map(float, con.r)),
                         "delta_null": con.delta_null},
            "estimate": estimate,
            "std_error": se,
            "t_statistic": t,
            "level": level,
            "normal_ci": list(normal_ci),
            "subsampling": sub_payload,
            "seed": seed,
        })
        return
    click.echo(f"method: {method}  variance: {v.method}  a_G: {v.a_G:.6g}")
    click.echo("coefficients:")
    for name, value in zip(names, fit.theta_hat):
        click.echo(f"  {name:<12s} {value:.10g}")
    click.echo(f"contrast {con_label}: estimate {estimate:.10g}  "
               f"se {se:.10g}  t {t:.10g}  (delta_null {con.delta_null:.6g})")
    click.echo(f"normal {100 * (1 - level):.4g}% CI: "
               f"[{normal_ci[0]:.10g}, {normal_ci[1]:.10g}]")
    if sub_payload is not None:
        lo, hi = sub_payload["ci"]
        click.echo(
            f"subsampling {100 * (1 - level):.4g}% CI: [{lo:.10g}, {hi:.10g}]  "
            f"(b={sub_payload['b']}, M={sub_payload['M']}, seed={seed})"
        )


@main.command("diagnose")
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@_data_options
@click.option("--contrast", default=None)
@click.option("--r", "r_spec", default=None)
@click.option("--k-fraction", type=float, default=0.1)
@click.option("--level", type=float, default=0.05)
@click.option("--json", "as_json", is_flag=True, default=False)
@_guarded
def cmd_diagnose(data, cluster_col, y_col, x_cols, no_intercept, contrast, r_spec,
                 k_fraction, level, as_json):
    """Surrogate tail diagnostic for heavy cluster scores (H0: index = 2)."""
    ds = load_csv(data, cluster_col, y_col, x_cols, add_intercept=not no_intercept)
    names = _coefficient_names(x_cols, not no_intercept)
    con, con_label = _resolve_contrast(names, contrast, r_spec, 0.0)
    fit = fit_ols(ds)
    scores = fit.scores @ (fit.gram_inverse @ con.r)
    diag = stable.estimate_tail(scores, k_fraction=k_fraction, level=level)
    if as_json:
        _echo_json({
            "schema_version": SCHEMA_VERSION,
            "command": "diagnose",
            "contrast": con_label,
            "alpha_hat": diag.alpha_hat,
            "p_hat": diag.p_hat,
            "k_fraction": diag.k_fraction,
            "level": level,
            "reject_alpha2": diag.reject_alpha2,
            "note": diag.note,
        })
        return
    verdict = "REJECT" if diag.reject_alpha2 else "do not reject"
    click.echo(f"tail index estimate (Hill): {diag.alpha_hat:.4g}")
    click.echo(f"tail balance p_hat:         {diag.p_hat:.4g}")
    click.echo(f"top-order fraction used:    {diag.k_fraction:.4g}")
    click.echo(f"H0: index = 2 vs H1: index < 2 at level {level:g}: {verdict}")
    click.echo(f"note: {diag.note}; this is a Hill-estimator stand-in, not the "
               "external likelihood-ratio test")


@main.command("subsample")
@click.argument("data", type=click.Path(exists=True, dir_okay=False))
@_data_options
@click.option("--contrast", default=None)
@click.option("--r", "r_spec", default=None)
@click.option("--delta-null", type=float, default=0.0)
@click.option("--b", "b_spec", default="auto")
@click.option("--m", "-M", "n_subsamples", type=int, default=1000)
@click.option("--level", type=float, default=0.05)
@click.option("--seed", type=int, default=0)
@click.option("--json", "as_json", is_flag=True, default=False)
@_guarded
def cmd_subsample(data, cluster_col, y_col, x_cols, no_intercept, contrast, r_spec,
                  delta_null, b_spec, n_subsamples, level, seed, as_json):
    """Score-subsampling critical values and confidence interval."""
    ds = load_csv(data, cluster_col, y_col, x_cols, add_intercept=not no_intercept)
    names = _coefficient_names(x_cols, not no_intercept)
    con, con_label = _resolve_contrast(names, contrast, r_spec, delta_null)
    fit = fit_ols(ds)
    table = None
    if b_spec == "auto":
        b, table = resampling.select_b_min_volatility(
            ds, con, a=level / 2.0, M=n_subsamples, seed=seed, fit=fit
        )
    else:
        b = int(b_spec)
    dist = resampling.build_subsampling_distribution(
        ds, con, b, M=n_subsamples, seed=seed, fit=fit
    )
    cv = resampling.critical_values(dist, level)
    estimate = float(con.r @ fit.theta_hat)
    sigma = standard_error(cr_variance(fit), con)
    t = t_statistic(fit, cr_variance(fit), con)
    lo, hi = estimate - sigma * cv.upper, estimate - sigma * cv.lower
    if as_json:
        _echo_json({
            "schema_version": SCHEMA_VERSION,
            "command": "subsample",
            "contrast": con_label,
            "estimate": estimate,
            "std_error": sigma,
            "t_statistic": t,
            "b": int(b),
            "M": dist.M,
            "n_degenerate": dist.n_degenerate,
            "enumerated": dist.enumerated,
            "level": level,
            "critical_values": {"lower": cv.lower, "upper": cv.upper},
            "ci": [lo, hi],
            "volatility_table": table,
            "seed": seed,
        })
        return
    click.echo(f"contrast {con_label}: estimate {estimate:.10g}  se {sigma:.10g}  t {t:.10g}")
    if table is not None:
        click.echo("volatility table (b, VI_b):")
        for bb, vi in table:
            click.echo(f"  {bb:>4d}  {vi:.6g}")
    click.echo(f"chosen b: {b}  (M={dist.M}, degenerate draws={dist.n_degenerate}, "
               f"enumerated={dist.enumerated})")
    click.echo(f"critical values at level {level:g}: "
               f"[{cv.lower:.10g}, {cv.upper:.10g}]")
    click.echo(f"subsampling {100 * (1 - level):.4g}% CI: [{lo:.10g}, {hi:.10g}]  (seed={seed})")


@main.command("limitdist")
@click.option("--alpha", type=float, required=True)
@click.option("--p", type=float, default=0.5)
@click.option("-n", "--n", "n_draws", type=int, default=100_000)
@click.option("--truncation-k", "truncation_K", type=int, default=stable.DEFAULT_TRUNCATION)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="Write the draws to this CSV file.")
@click.option("--size-at", type=float, default=None,
              help="Report the asymptotic size of the two-sided test at this critical value.")
@click.option("--threads", type=int, default=None)
@click.option("--json", "as_json", is_flag=True, default=False)
@_guarded
def cmd_limitdist(alpha, p, n_draws, truncation_K, seed, out, size_at, threads, as_json):
    """Sample the self-normalized limiting law and/or report test sizes."""
    if out is None and size_at is None:
        raise ParameterError("nothing to do: pass --out and/or --size-at")
    params = stable.StableLimitParams(alpha=alpha, p=p, truncation_K=truncation_K)
    threads = _resolve_threads(threads)
    size = None
    draws = None
    if out is not None:
        draws = stable.lepage_sample(params, n_draws, seed, threads=threads)
        lines = ["draw"] + [repr(float(v)) for v in draws]
        Path(out).write_text("\n".join(lines) + "\n", encoding="utf-8")
        _progress(f"wrote {n_draws} draws to {out}")
    if size_at is not None:
        if draws is not None and alpha < 2.0:
            size = float(np.mean(np.abs(draws) > size_at))
        else:
            size = stable.normal_critical_size(params, size_at, n_draws, seed, threads=threads)
    if as_json:
        _echo_json({
            "schema_version": SCHEMA_VERSION,
            "command": "limitdist",
            "alpha": alpha,
            "p": p,
            "n": n_draws,
            "truncation_K": truncation_K,
            "seed": seed,
            "out": out,
            "size_at": size_at,
            "size": size,
        })
        return
    if size is not None:
        click.echo(f"size at |t| > {size_at:g}: {size:.3f}")


@main.command("simulate")
@click.option("--g", "--G", "n_clusters", type=int, required=True)
@click.option("--alpha", type=float, required=True)
@click.option("--size-scale", type=float, default=1.0)
@click.option("--k", "--K", "n_covariates", type=int, default=0)
@click.option("--rho", type=float, default=0.5)
@click.option("--treat-fraction", type=float, default=0.2)
@click.option("--error-sd-control", type=float, default=0.2)
@click.option("--error-sd-treated", type=float, default=1.0)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@_guarded
def cmd_simulate(n_clusters, alpha, size_scale, n_covariates, rho, treat_fraction,
                 error_sd_control, error_sd_treated, seed, out):
    """Draw one dataset from the cluster treatment design and write it as CSV.

    Columns: cluster, y, const, t, x1..xK. Reload with --no-intercept since
    the intercept column is materialized in the file.
    """
    cfg = simulation.DgpConfig(
        G=n_clusters, alpha=alpha, size_scale=size_scale, K=n_covariates, rho=rho,
        treat_fraction=treat_fraction, error_sd_control=error_sd_control,
        error_sd_treated=error_sd_treated,
    )
    ds = simulation.draw_dataset(cfg, seed)
    x_cols = ["const", "t"] + [f"x{j + 1}" for j in range(n_covariates)]
    to_csv(ds, out, cluster_col="cluster", y_col="y", x_cols=x_cols)
    _progress(f"wrote G={ds.G} clusters, N={ds.N} observations to {out}")


@main.command("montecarlo")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_prefix", default=None,
              help="Output prefix; overrides output_prefix from the config.")
@click.option("--threads", type=int, default=None)
@_guarded
def cmd_montecarlo(config, out_prefix, threads):
    """Run a Monte Carlo study described by a JSON config; write CSV and JSON reports."""
    raw = Path(config).read_text(encoding="utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"config is not valid JSON: {exc}") from exc
    cfg, methods, replications, level, seed, settings, prefix = _parse_run_config(doc)
    if out_prefix is not None:
        prefix = out_prefix
    if prefix is None:
        raise ParameterError("no output prefix: set output_prefix in the config or pass --out")
    prefix_path = Path(prefix)
    if prefix_path.parent != Path("") and not prefix_path.parent.exists():
        raise ParameterError(f"output directory {prefix_path.parent} does not exist")

    threads = _resolve_threads(threads)
    _progress(f"running {replications} replications with methods {','.join(methods)} "
              f"(seed={seed}, threads={threads})")
    report = simulation.run_monte_carlo(
        cfg, methods, replications, level=level, seed=seed, threads=threads,
        settings=settings,
        progress=lambda done, total: _progress(f"replication {done}/{total}"),
    )
    csv_path = Path(str(prefix_path) + ".csv")
    json_path = Path(str(prefix_path) + ".json")
    simulation.write_report_csv(report, csv_path)
    simulation.write_report_json(report, json_path)
    _progress(f"wall time {report.meta['wall_time_seconds']:.1f}s")
    _progress(f"giant cluster events: {report.meta['giant_cluster_events']}, "
              f"failed replications: {report.meta['failed_replications']}")
    click.echo(f"wrote {csv_path} and {json_path}")


def _parse_run_config(doc: dict):
    if not isinstance(doc, dict):
        raise ParameterError("config must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ParameterError(
            f"unrecognized schema_version {version!r}; this build reads version {SCHEMA_VERSION}"
        )
    for key in ("dgp", "methods", "replications", "seed"):
        if key not in doc:
            raise ParameterError(f"config is missing required key {key!r}")
    dgp = doc["dgp"]
    if not isinstance(dgp, dict) or "G" not in dgp or "alpha" not in dgp:
        raise ParameterError("config dgp must be an object with at least G and alpha")
    allowed = {"G", "alpha", "size_scale", "K", "rho", "theta", "treat_fraction",
               "error_sd_control", "error_sd_treated"}
    unknown = set(dgp) - allowed
    if unknown:
        raise ParameterError(f"unknown dgp keys: {sorted(unknown)}")
    if dgp.get("theta") is not None:
        dgp = dict(dgp, theta=tuple(dgp["theta"]))
    cfg = simulation.DgpConfig(**dgp)
    methods = doc["methods"]
    if not isinstance(methods, list) or not methods:
        raise ParameterError("config methods must be a non-empty list")
    replications = doc["replications"]
    if not isinstance(replications, int) or replications < 1:
        raise ParameterError("config replications must be a positive integer")
    seed = doc["seed"]
    if not isinstance(seed, int):
        raise ParameterError("config seed must be an integer")
    level = doc.get("level", 0.05)
    settings_doc = doc.get("settings", {})
    if not isinstance(settings_doc, dict):
        raise ParameterError("config settings must be an object")
    unknown = set(settings_doc) - {"sub_b", "sub_M", "bootstrap_B", "use_cr1"}
    if unknown:
        raise ParameterError(f"unknown settings keys: {sorted(unknown)}")
    settings = simulation.McSettings(**settings_doc)
    return cfg, methods, replications, level, seed, settings, doc.get("output_prefix")


if __name__ == "__main__":
    main()
