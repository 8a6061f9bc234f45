"""Upper-endpoint (maximum lifespan) estimates, delta-method and bootstrap uncertainty."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .design import CovariateSchema, Exceedances, encode_profile
from .errors import NoFiniteEndpointError, NumericalError, RankDeficientError
from .fit import FitResult, OptimizerOptions, fit_mle
from .likelihood import ParamVector

logger = logging.getLogger(__name__)

DEFAULT_REPLICATES = 1000


def _theta(obj) -> ParamVector:
    if isinstance(obj, FitResult):
        return obj.theta_hat
    if isinstance(obj, ParamVector):
        return obj
    return ParamVector.from_array(obj)


def _z(level: float) -> float:
    if not 0 <= level < 1:
        raise ValueError("level must lie in [0, 1)")
    return float(norm.ppf(0.5 + level / 2.0))


def endpoint(theta, profile, u: float) -> float:
    """``u - exp(beta . z) / xi``; raises when ``xi >= 0``."""
    theta = _theta(theta)
    if not theta.xi < 0:
        raise NoFiniteEndpointError(theta.xi)
    return float(u - np.exp(np.asarray(profile, dtype=float) @ theta.beta) / theta.xi)


def endpoint_gradient(theta, profile) -> np.ndarray:
    """Gradient of the endpoint with respect to ``(beta, xi)``."""
    theta = _theta(theta)
    if not theta.xi < 0:
        raise NoFiniteEndpointError(theta.xi)
    z = np.asarray(profile, dtype=float)
    sigma = np.exp(z @ theta.beta)
    return np.append(-sigma / theta.xi * z, sigma / theta.xi**2)


@dataclass(frozen=True, eq=False)
class EndpointEstimate:
    profile: np.ndarray
    x_star: float
    se: float
    ci: tuple[float, float]
    method: str = "fisher-delta"


def _delta_se(grad, cov) -> float:
    var = float(grad @ np.asarray(cov) @ grad)
    if var < 0:
        raise NumericalError(f"delta-method variance is negative ({var:.3g})")
    return float(np.sqrt(var))


def endpoint_delta_ci(result, profile, u: float, level: float = 0.95,
                      covariance=None) -> EndpointEstimate:
    """Endpoint with a delta-method standard error and normal interval.

    ``result`` is a FitResult, or a ParamVector together with ``covariance``.
    """
    theta = _theta(result)
    cov = covariance if covariance is not None else result.covariance
    x = endpoint(theta, profile, u)
    se = _delta_se(endpoint_gradient(theta, profile), cov)
    z = _z(level)
    return EndpointEstimate(np.asarray(profile, dtype=float), x, se, (x - z * se, x + z * se))


@dataclass(frozen=True)
class Contrast:
    covariate: str
    level: str
    delta: float
    se: float = float("nan")
    ci: tuple[float, float] = (float("nan"), float("nan"))


def contrast_table(result, schema: CovariateSchema, base_profile: Mapping[str, str] | None,
                   u: float, level: float = 0.95, covariance=None) -> list[Contrast]:
    """Endpoint change from switching one characteristic of ``base_profile``.

    One row per covariate level other than the base's own. The base defaults
    to the all-reference profile. Standard errors use the delta method when a
    covariance is available.
    """
    theta = _theta(result)
    if covariance is None and isinstance(result, FitResult):
        covariance = result.covariance
    base = dict(base_profile) if base_profile is not None else schema.reference_profile()
    z0 = encode_profile(base, schema)
    x0 = endpoint(theta, z0, u)
    g0 = endpoint_gradient(theta, z0)
    zq = _z(level)
    rows = []
    for cov in schema.covariates:
        for lvl in cov.categories:
            if lvl == base[cov.name]:
                continue
            z1 = encode_profile({**base, cov.name: lvl}, schema)
            delta = endpoint(theta, z1, u) - x0
            se, ci = float("nan"), (float("nan"), float("nan"))
            if covariance is not None and np.all(np.isfinite(covariance)):
                se = _delta_se(endpoint_gradient(theta, z1) - g0, covariance)
                ci = (delta - zq * se, delta + zq * se)
            rows.append(Contrast(cov.name, lvl, delta, se, ci))
    return rows


@dataclass(frozen=True, eq=False)
class BootstrapRun:
    replicates: int
    seed: int
    estimates: list[ParamVector]
    failures: int
    indices: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.estimates) + self.failures != self.replicates:
            raise ValueError("stored estimates plus failures must equal the replicate count")

    @property
    def flagged(self) -> bool:
        """More than 10% of replicates failed."""
        return self.failures > 0.1 * self.replicates

    def as_array(self) -> np.ndarray:
        return np.array([e.as_array() for e in self.estimates])


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for bootstrap replicate ``index``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _resample_with_replacement(rng, n, index):
    return rng.integers(0, n, size=n)


def bootstrap(data: Exceedances, B: int = DEFAULT_REPLICATES, seed: int = 0, *,
              init: ParamVector | None = None, options: OptimizerOptions | None = None,
              threads: int = 1,
              resample: Callable[[np.random.Generator, int, int], np.ndarray] | None = None,
              ) -> BootstrapRun:
    """Non-parametric bootstrap over exceedance records.

    Each replicate draws ``n`` records with replacement from its own seeded
    stream, refits from ``init`` (the full-data estimate by default) and keeps
    the estimate when the refit converges. ``resample`` replaces the
    index-drawing step, e.g. to force the identity in tests.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    options = options or OptimizerOptions()
    if init is None:
        init = fit_mle(data, options=options, covariance=False).theta_hat
    draw = resample or _resample_with_replacement
    n = len(data)

    def one(index):
        idx = draw(replicate_rng(seed, index), n, index)
        try:
            res = fit_mle(data.take(idx), init=init, options=options, covariance=False)
        except (RankDeficientError, NumericalError, ValueError) as exc:
            logger.debug("replicate %d failed: %s", index, exc)
            return index, None
        return index, res.theta_hat if res.converged else None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, range(B)))
    else:
        out = [one(i) for i in range(B)]
    out.sort(key=lambda t: t[0])
    kept = [(i, th) for i, th in out if th is not None]
    run = BootstrapRun(B, seed, [th for _, th in kept], B - len(kept), [i for i, _ in kept])
    if run.flagged:
        logger.warning("bootstrap: %d of %d replicates failed", run.failures, B)
    return run


def bootstrap_percentile_ci(run: BootstrapRun, functional: Callable[[ParamVector], float],
                            level: float = 0.95, min_replicates: int = 100):
    """Percentile interval of ``functional`` over the stored replicates."""
    if len(run.estimates) < min_replicates:
        raise ValueError(
            f"percentile interval needs at least {min_replicates} replicates, "
            f"got {len(run.estimates)}")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    values = np.array([functional(th) for th in run.estimates], dtype=float)
    alpha = 1.0 - level
    lo, hi = np.quantile(values, [alpha / 2.0, 1.0 - alpha / 2.0], method="linear")
    return float(lo), float(hi)


def endpoint_functional(profile, u: float) -> Callable[[ParamVector], float]:
    """Endpoint as a replicate functional; NaN where a replicate has ``xi >= 0``."""
    z = np.asarray(profile, dtype=float)

    def g(theta):
        return endpoint(theta, z, u) if theta.xi < 0 else float("nan")
    return g


def profile_rows(schema: CovariateSchema, profiles: Sequence[Mapping[str, str]]) -> np.ndarray:
    return np.array([encode_profile(p, schema) for p in profiles])
