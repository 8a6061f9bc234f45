"""Q-Q grids, threshold-sensitivity sweeps and per-profile endpoint tables."""
from __future__ import annotations

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .design import CovariateSchema, Exceedances, ModelSpec, encode_profile, to_exceedances
from .errors import NoFiniteEndpointError, NumericalError, RankDeficientError
from .fit import FitResult, OptimizerOptions, fit_mle, wald_intervals
from .gpd import gpd_quantile
from .inference import endpoint_delta_ci

logger = logging.getLogger(__name__)

MIN_QQ_DEATHS = 100


def default_probs() -> np.ndarray:
    return np.round(np.arange(1, 1000) * 0.001, 3)


@dataclass(frozen=True, eq=False)
class QqGrid:
    probs: np.ndarray
    theoretical: np.ndarray
    empirical: np.ndarray
    sigma: float
    xi: float
    n_deaths: int
    few_deaths: bool = False

    @property
    def max_gap(self) -> float:
        return float(np.max(np.abs(self.theoretical - self.empirical)))


def qq_grid(result: FitResult, data: Exceedances, probs=None, profile=None) -> QqGrid:
    """Fitted versus empirical exceedance quantiles.

    The pooled grid uses a single GPD whose scale is the mean fitted scale over
    the records; with ``profile`` (a design row) only matching records are used
    with that profile's scale. Empirical quantiles come from observed deaths
    only; censored exceedances are left out, so heavy censoring or delayed entry
    distorts the comparison.
    """
    probs = default_probs() if probs is None else np.asarray(probs, dtype=float)
    if probs.ndim != 1 or np.any(np.diff(probs) <= 0):
        raise ValueError("probs must be strictly increasing")
    theta = result.theta_hat
    if profile is not None:
        z = np.asarray(profile, dtype=float)
        mask = np.all(data.Z == z, axis=1)
        sigma = float(np.exp(z @ theta.beta))
    else:
        mask = np.ones(len(data), dtype=bool)
        sigma = float(np.mean(np.exp(data.Z @ theta.beta)))
    deaths = data.y[mask & data.event]
    if np.any(data.event[mask] == 0):
        logger.info("qq grid: %d censored exceedances excluded from empirical quantiles",
                    int(np.sum(~data.event[mask])))
    few = len(deaths) < MIN_QQ_DEATHS
    if few:
        logger.warning("qq grid: only %d deaths; empirical quantiles are unreliable", len(deaths))
    if len(deaths) == 0:
        raise ValueError("no observed deaths for the Q-Q grid")
    theo = np.asarray(gpd_quantile(probs, sigma=sigma, xi=theta.xi), dtype=float)
    emp = np.quantile(deaths, probs, method="linear")
    return QqGrid(probs, theo, emp, sigma, theta.xi, len(deaths), few)


@dataclass(frozen=True, eq=False)
class SweepRow:
    u: float
    xi: float
    xi_ci: tuple[float, float]
    beta: np.ndarray
    beta_ci: np.ndarray
    n_exceedances: int
    converged: bool
    message: str = ""
    result: FitResult | None = None

    @property
    def xi_ci_width(self) -> float:
        return self.xi_ci[1] - self.xi_ci[0]


@dataclass(frozen=True, eq=False)
class SweepResult:
    rows: list[SweepRow]
    columns: tuple[str, ...]

    @property
    def thresholds(self) -> list[float]:
        return [r.u for r in self.rows]


def _sweep_one(records, schema, u, options, level):
    data = to_exceedances(records, ModelSpec(u, schema))
    k = schema.n_columns
    nan_ci = np.full((k, 2), np.nan)
    try:
        res = fit_mle(data, options=options)
    except (RankDeficientError, NumericalError, ValueError) as exc:
        logger.warning("sweep u=%g: %s", u, exc)
        return SweepRow(u, np.nan, (np.nan, np.nan), np.full(k, np.nan), nan_ci, len(data),
                        False, str(exc))
    ci = wald_intervals(res, level) if res.converged else np.full((k + 1, 2), np.nan)
    return SweepRow(u, res.xi, (float(ci[-1, 0]), float(ci[-1, 1])), res.beta.copy(), ci[:-1],
                    len(data), res.converged, res.message, res)


def threshold_sweep(records, schema: CovariateSchema, thresholds: Sequence[float],
                    options: OptimizerOptions | None = None, level: float = 0.95,
                    threads: int = 1) -> SweepResult:
    """Refit the model at each threshold; failures are recorded, not raised."""
    thresholds = [float(u) for u in thresholds]
    if len(thresholds) == 0 or np.any(np.diff(thresholds) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda u: _sweep_one(records, schema, u, options, level),
                                 thresholds))
    else:
        rows = [_sweep_one(records, schema, u, options, level) for u in thresholds]
    return SweepResult(rows, schema.columns)


@dataclass(frozen=True, eq=False)
class ProfileEndpointRow:
    labels: dict
    frequency: int
    x_star: float
    se: float
    ci: tuple[float, float]


def profile_endpoint_table(result: FitResult, spec: ModelSpec, data, min_frequency: int = 10,
                           level: float = 0.95) -> list[ProfileEndpointRow]:
    """Endpoint and delta-method interval for each profile seen more than ``min_frequency`` times.

    ``data`` is either the exceedances at ``spec.threshold_u`` (carrying labels)
    or the raw records. Rows are ordered by frequency, most frequent first.
    """
    if not result.xi < 0:
        raise NoFiniteEndpointError(result.xi)
    if not isinstance(data, Exceedances):
        data = to_exceedances(data, spec)
    if data.labels is None:
        raise ValueError("exceedances carry no covariate labels")
    names = spec.schema.names
    freq = Counter(data.labels)
    rows = []
    for labels, count in sorted(freq.items(), key=lambda kv: (-kv[1], kv[0])):
        if count <= min_frequency:
            continue
        prof = dict(zip(names, labels))
        est = endpoint_delta_ci(result, encode_profile(prof, spec.schema), spec.threshold_u, level)
        rows.append(ProfileEndpointRow(prof, count, est.x_star, est.se, est.ci))
    return rows
