"""Generalized Pareto kernel for threshold exceedances.

All functions broadcast over numpy arrays. Shapes with ``abs(xi) < XI_ZERO_TOL``
use the exponential limit. The support is treated as closed at a finite upper
endpoint: survival and density are exactly zero there.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

XI_ZERO_TOL = 1e-8


@dataclass(frozen=True)
class GpdParams:
    sigma: float
    xi: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma!r}")
        if not np.isfinite(self.xi):
            raise ValueError(f"xi must be finite, got {self.xi!r}")

    @property
    def upper_endpoint(self) -> float:
        """Largest attainable exceedance, ``inf`` unless ``xi < 0``."""
        if self.xi < 0 and abs(self.xi) >= XI_ZERO_TOL:
            return -self.sigma / self.xi
        return np.inf


def _is_limit(xi) -> bool:
    return abs(xi) < XI_ZERO_TOL


def _check_y(y):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(np.isnan(y)):
        raise ValueError("exceedances must be non-negative")
    return y


def _unpack(p: GpdParams | None, sigma, xi):
    if p is not None:
        return p.sigma, p.xi
    return sigma, xi


def _scalar_or_array(out):
    return out.item() if out.ndim == 0 else out


def log_survival(y, p: GpdParams | None = None, *, sigma=None, xi=None):
    """Log survival; ``-inf`` at and beyond a finite endpoint."""
    sigma, xi = _unpack(p, sigma, xi)
    y = _check_y(y)
    sigma = np.asarray(sigma, dtype=float)
    if _is_limit(xi):
        return _scalar_or_array(-y / sigma)
    t = xi * y / sigma
    inside = 1.0 + t > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(inside, -np.log1p(np.where(inside, t, 0.0)) / xi, -np.inf)
    return _scalar_or_array(np.asarray(out))


def gpd_survival(y, p: GpdParams | None = None, *, sigma=None, xi=None):
    """P(Y > y) for the exceedance distribution."""
    return _scalar_or_array(np.exp(np.asarray(log_survival(y, p, sigma=sigma, xi=xi))))


def log_density(y, p: GpdParams | None = None, *, sigma=None, xi=None):
    sigma, xi = _unpack(p, sigma, xi)
    y = _check_y(y)
    sigma = np.asarray(sigma, dtype=float)
    if _is_limit(xi):
        return _scalar_or_array(-np.log(sigma) - y / sigma)
    t = xi * y / sigma
    inside = 1.0 + t > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = -np.log(sigma) - (1.0 / xi + 1.0) * np.log1p(np.where(inside, t, 0.0))
        out = np.where(inside, lp, -np.inf)
    return _scalar_or_array(np.asarray(out))


def gpd_density(y, p: GpdParams | None = None, *, sigma=None, xi=None):
    return _scalar_or_array(np.exp(np.asarray(log_density(y, p, sigma=sigma, xi=xi))))


def gpd_cdf(y, p: GpdParams | None = None, *, sigma=None, xi=None):
    sigma, xi = _unpack(p, sigma, xi)
    return _scalar_or_array(-np.expm1(np.asarray(log_survival(y, sigma=sigma, xi=xi))))


def gpd_quantile(prob, p: GpdParams | None = None, *, sigma=None, xi=None):
    """Exceedance ``y`` with ``P(Y <= y) = prob``."""
    sigma, xi = _unpack(p, sigma, xi)
    prob = np.asarray(prob, dtype=float)
    if np.any(~((prob > 0) & (prob < 1))):
        raise ValueError("prob must lie strictly inside (0, 1)")
    sigma = np.asarray(sigma, dtype=float)
    log_tail = np.log1p(-prob)
    if _is_limit(xi):
        return _scalar_or_array(-sigma * log_tail)
    return _scalar_or_array(sigma * np.expm1(-xi * log_tail) / xi)


def gpd_sample_truncated(a, p: GpdParams | None = None, rng=None, *, sigma=None, xi=None,
                         size=None):
    """Draw exceedances conditional on ``Y > a`` by inverse transform.

    Solves ``S(Y) = S(a) * U`` for a uniform ``U`` in (0, 1]. ``a`` and ``sigma``
    broadcast; ``a = 0`` gives an unconditional draw.
    """
    sigma, xi = _unpack(p, sigma, xi)
    if rng is None:
        raise ValueError("a seeded numpy Generator is required")
    a = np.asarray(a, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(a < 0) or np.any(np.isnan(a)):
        raise ValueError("truncation point must be non-negative")
    if xi < 0 and not _is_limit(xi) and np.any(a >= -sigma / xi):
        raise ValueError("truncation point lies outside the support")
    shape = np.broadcast_shapes(a.shape, sigma.shape) if size is None else size
    u = 1.0 - rng.random(shape)  # (0, 1]
    log_u = np.log(u)
    if _is_limit(xi):
        out = a - sigma * log_u
    else:
        # a * U^-xi + sigma * (U^-xi - 1) / xi, rearranged to avoid cancellation
        out = a * np.exp(-xi * log_u) + sigma * np.expm1(-xi * log_u) / xi
        if xi < 0:
            out = np.minimum(out, np.nextafter(-sigma / xi, 0))
    return _scalar_or_array(np.asarray(out))
