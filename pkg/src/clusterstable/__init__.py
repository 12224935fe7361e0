"""Cluster-robust inference that stays valid under heavy-tailed cluster sizes.

Provides OLS and size-adjusted (SACR) estimation with analytic and jackknife
cluster-robust variances, score-subsampling critical values and confidence
intervals, pairs and wild cluster bootstrap baselines, samplers and
diagnostics for the non-normal limiting laws, and a Monte Carlo harness.
"""

from .data import Cluster, ClusteredDataset, load_csv, to_csv, validate
from .errors import (
    AlphaOutOfRange,
    ClusterStableError,
    DataError,
    EmptyFile,
    GiantCluster,
    InvalidGrid,
    MissingColumn,
    NonNumericCell,
    NumericalError,
    ParameterError,
    SingleCluster,
    SingularGram,
    SingularLeaveOneOutGram,
    TooFewClusters,
    TooManyDegenerateDraws,
    TooManyDegenerateReplications,
    TooManySingularResamples,
    ZeroDenominator,
    ZeroSigma,
    ZeroStandardError,
)
from .estimators import (
    ClusterCrossProducts,
    LinearContrast,
    RegressionFit,
    VarianceEstimate,
    cr1_factor,
    cr_variance,
    cross_products,
    fit_ols,
    fit_sacr,
    jackknife_variance,
    sacr_variance,
    standard_error,
    t_statistic,
)
from .resampling import (
    BootstrapResult,
    CriticalValues,
    SubsamplingDistribution,
    bootstrap_quantile,
    build_subsampling_distribution,
    confidence_interval,
    critical_value,
    critical_values,
    pairs_cluster_bootstrap,
    pairs_resample_statistic,
    score_subsample_statistic,
    select_b_min_volatility,
    volatility_indices,
    wild_bootstrap_statistic,
    wild_cluster_bootstrap,
)
from .simulation import (
    DgpConfig,
    McSettings,
    MethodRow,
    MonteCarloReport,
    draw_dataset,
    equicorrelated_normal,
    qq_data,
    run_monte_carlo,
    write_qq_csv,
    write_report_csv,
    write_report_json,
)
from .stable import (
    StableLimitParams,
    TailDiagnostic,
    centering_constants,
    estimate_tail,
    lepage_sample,
    normal_critical_size,
    stable_cf,
)

__version__ = "0.1.0"
