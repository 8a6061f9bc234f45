"""Log-likelihood of the log-linear-scale GPD under left truncation and right censoring.

For record ``i`` with linear predictor ``eta = beta . z``, scale ``exp(eta)``,
exceedance ``y``, entry exceedance ``a`` and event flag ``d``::

    l_i = -d*eta - (1/xi + d) log(1 + xi*y*e^-eta) + (1/xi) log(1 + xi*a*e^-eta)

Sums use ``math.fsum`` so the result is correctly rounded and therefore
independent of record order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .design import Exceedances
from .gpd import XI_ZERO_TOL

NEG_INF = -np.inf
# below this |xi * x| the q-term switches to its Taylor series
_SERIES_T = 1e-3


@dataclass(frozen=True, eq=False)
class ParamVector:
    beta: np.ndarray
    xi: float

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float).reshape(-1)
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "xi", float(self.xi))

    def __len__(self):
        return len(self.beta) + 1

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.xi == other.xi and np.array_equal(self.beta, other.beta)

    def as_array(self) -> np.ndarray:
        return np.append(self.beta, self.xi)

    @classmethod
    def from_array(cls, theta) -> "ParamVector":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:-1], theta[-1])

    def scale(self, Z) -> np.ndarray:
        return np.exp(np.asarray(Z) @ self.beta)


def _as_theta(theta) -> ParamVector:
    return theta if isinstance(theta, ParamVector) else ParamVector.from_array(theta)


def _check_dims(theta: ParamVector, data: Exceedances):
    if len(theta.beta) != data.Z.shape[1]:
        raise ValueError(
            f"beta has {len(theta.beta)} entries but the design has {data.Z.shape[1]} columns")


def _log1p_over_xi(x, xi):
    """``log(1 + xi*x) / xi`` with the second-order limit when ``xi`` is ~0."""
    if abs(xi) < XI_ZERO_TOL:
        return x - 0.5 * xi * x * x
    return np.log1p(xi * x) / xi


def _q(x, xi):
    """``log(1 + xi*x)/xi**2 - x/(xi*(1 + xi*x))``, the xi-derivative of -(1/xi)log(1+xi*x)."""
    t = xi * x
    if abs(xi) < XI_ZERO_TOL:
        return x * x * (0.5 - 2.0 * t / 3.0)
    small = np.abs(t) < _SERIES_T
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = (np.log1p(t) - t / (1.0 + t)) / (xi * xi)
    series = x * x * (0.5 + t * (-2.0 / 3.0 + t * (0.75 + t * (-0.8 + t * (5.0 / 6.0)))))
    return np.where(small, series, exact)


def _sum(values) -> float:
    return math.fsum(np.asarray(values, dtype=float).tolist())


def _support(theta: ParamVector, data: Exceedances):
    eta = data.Z @ theta.beta
    with np.errstate(over="ignore", invalid="ignore"):
        s = np.exp(-eta)
        ys = data.y * s
        as_ = data.a * s
    return eta, ys, as_


def feasible(theta, data: Exceedances) -> bool:
    """True when every record's exceedance and entry point lie strictly inside the support.

    A record at or beyond the implied endpoint (death or censored) makes the
    parameters infeasible, since its likelihood contribution would be zero.
    """
    theta = _as_theta(theta)
    _check_dims(theta, data)
    if not (np.isfinite(theta.xi) and np.all(np.isfinite(theta.beta))):
        return False
    _, ys, as_ = _support(theta, data)
    # scaled exceedances overflow for extreme beta; treat as outside the domain
    if not (np.all(np.isfinite(ys)) and np.all(np.isfinite(as_))):
        return False
    if theta.xi >= 0 or abs(theta.xi) < XI_ZERO_TOL:
        return True
    return bool(np.all(1.0 + theta.xi * ys > 0) and np.all(1.0 + theta.xi * as_ > 0))


def contributions(theta, data: Exceedances) -> np.ndarray:
    """Per-record log-likelihood terms; ``-inf`` entries mark infeasible records."""
    theta = _as_theta(theta)
    _check_dims(theta, data)
    xi = theta.xi
    eta, ys, as_ = _support(theta, data)
    d = data.event.astype(float)
    if abs(xi) >= XI_ZERO_TOL and xi < 0:
        bad = (1.0 + xi * ys <= 0) | (1.0 + xi * as_ <= 0)
        if np.any(bad):
            out = np.full(len(data), NEG_INF)
            ok = ~bad
            sub = contributions(theta, data.take(np.flatnonzero(ok))) if ok.any() else []
            out[ok] = sub
            return out
    log_y = np.log1p(xi * ys) if abs(xi) >= XI_ZERO_TOL else xi * ys
    return -d * eta - _log1p_over_xi(ys, xi) - d * log_y + _log1p_over_xi(as_, xi)


def log_likelihood(theta, data: Exceedances) -> float:
    """Total log-likelihood, or ``-inf`` when ``theta`` is infeasible for ``data``."""
    if len(data) == 0:
        raise ValueError("no exceedances")
    theta = _as_theta(theta)
    if not feasible(theta, data):
        return NEG_INF
    return _sum(contributions(theta, data))


def score_terms(theta, data: Exceedances):
    """Per-record derivative weights ``(w_beta, w_xi)``; ``dl/dbeta = Z.T @ w_beta``."""
    theta = _as_theta(theta)
    if not feasible(theta, data):
        raise ValueError("gradient requested at parameters infeasible for the data")
    xi = theta.xi
    _, ys, as_ = _support(theta, data)
    d = data.event.astype(float)
    gy = ys / (1.0 + xi * ys)
    ga = as_ / (1.0 + xi * as_)
    w_beta = -d + (1.0 + xi * d) * gy - ga
    w_xi = _q(ys, xi) - _q(as_, xi) - d * gy
    return w_beta, w_xi


def gradient(theta, data: Exceedances) -> np.ndarray:
    """Analytic gradient ``(dl/dbeta, dl/dxi)``; raises on infeasible ``theta``."""
    w_beta, w_xi = score_terms(theta, data)
    Z = data.Z
    g = np.empty(Z.shape[1] + 1)
    for j in range(Z.shape[1]):
        col = Z[:, j]
        g[j] = _sum(w_beta[col != 0] * col[col != 0])
    g[-1] = _sum(w_xi)
    return g


def naive_log_likelihood(theta, data: Exceedances) -> float:
    """Log-likelihood with the truncation term dropped (entry exceedances set to zero)."""
    return log_likelihood(theta, data.without_truncation())
