"""Covariate generalized Pareto models for survival beyond a high threshold.

Fits a GPD with log-linear scale and common shape to exceedances observed with
left truncation and right censoring, and derives upper-endpoint estimates with
Fisher/delta-method and bootstrap uncertainty.
"""
__version__ = "0.1.0"

from .design import (CovariateSchema, Exceedance, Exceedances, IndividualRecord, ModelSpec,
                     contingency_summary, decode_profile, encode_profile, load_records,
                     load_schema, parse_schema, resolve_references, to_exceedances)
from .diagnostics import profile_endpoint_table, qq_grid, threshold_sweep
from .estimator import ProfileEncoder, TruncatedGPDRegressor
from .fit import FitResult, OptimizerOptions, fit_mle, observed_fisher, wald_intervals
from .gpd import GpdParams, gpd_density, gpd_quantile, gpd_sample_truncated, gpd_survival
from .inference import (BootstrapRun, EndpointEstimate, bootstrap, bootstrap_percentile_ci,
                        contrast_table, endpoint, endpoint_delta_ci)
from .likelihood import ParamVector, feasible, gradient, log_likelihood
from .simulate import ScenarioConfig, naive_vs_corrected, simulate_population

__all__ = [
    "BootstrapRun", "CovariateSchema", "EndpointEstimate", "Exceedance", "Exceedances",
    "FitResult", "GpdParams", "IndividualRecord", "ModelSpec", "OptimizerOptions",
    "ParamVector", "ProfileEncoder", "ScenarioConfig", "TruncatedGPDRegressor", "bootstrap",
    "bootstrap_percentile_ci", "contingency_summary", "contrast_table", "decode_profile",
    "encode_profile", "endpoint", "endpoint_delta_ci", "feasible", "fit_mle", "gpd_density",
    "gpd_quantile", "gpd_sample_truncated", "gpd_survival", "gradient", "load_records",
    "load_schema", "log_likelihood", "naive_vs_corrected", "observed_fisher", "parse_schema",
    "profile_endpoint_table", "qq_grid", "resolve_references", "simulate_population", "threshold_sweep",
    "to_exceedances", "wald_intervals",
]
