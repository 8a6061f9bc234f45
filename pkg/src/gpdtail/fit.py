"""Maximum-likelihood fitting by BFGS with a strong-Wolfe line search."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .design import Exceedances
from .errors import NumericalError, RankDeficientError
from .likelihood import ParamVector, feasible, gradient, log_likelihood

logger = logging.getLogger(__name__)

DEFAULT_XI0 = -0.1


@dataclass(frozen=True)
class OptimizerOptions:
    max_iter: int = 500
    grad_tol: float = 1e-6
    step_tol: float = 1e-9
    c1: float = 1e-4
    c2: float = 0.9
    max_line_evals: int = 40
    # iterate past grad_tol down to polish * grad_tol while progress is possible
    polish: float = 1e-3


@dataclass(frozen=True, eq=False)
class FitResult:
    theta_hat: ParamVector
    loglik: float
    covariance: np.ndarray
    converged: bool
    iterations: int
    gradient_norm: float
    columns: tuple[str, ...] = ()
    n: int = 0
    message: str = ""
    init: ParamVector | None = field(default=None, repr=False)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.columns) + ("xi",)

    @property
    def params(self) -> np.ndarray:
        return self.theta_hat.as_array()

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def xi(self) -> float:
        return self.theta_hat.xi

    @property
    def beta(self) -> np.ndarray:
        return self.theta_hat.beta


class _Objective:
    """Negative mean log-likelihood and its gradient, with call counting."""

    def __init__(self, data: Exceedances, loglik_fn=log_likelihood, grad_fn=gradient):
        self.data = data
        self.n = len(data)
        self.loglik_fn = loglik_fn
        self.grad_fn = grad_fn
        self.n_evals = 0

    def f(self, x) -> float:
        self.n_evals += 1
        ll = self.loglik_fn(ParamVector.from_array(x), self.data)
        return np.inf if not np.isfinite(ll) else -ll / self.n

    def g(self, x) -> np.ndarray:
        return -self.grad_fn(ParamVector.from_array(x), self.data) / self.n


def _zoom(phi, dphi, lo, hi, phi_lo, dphi_lo, phi0, dphi0, c1, c2, budget):
    """Nocedal & Wright Algorithm 3.6 with safeguarded interpolation.

    ``phi`` may return ``inf`` (infeasible point); that counts as failing the
    sufficient-decrease test so the bracket shrinks toward ``lo``.
    """
    for _ in range(budget):
        width = hi - lo
        # quadratic interpolation from phi(lo), phi'(lo), phi(hi) when usable
        alpha = None
        phi_hi = phi.cache.get(hi)
        if phi_hi is not None and np.isfinite(phi_hi):
            denom = 2.0 * (phi_hi - phi_lo - dphi_lo * width)
            if denom > 0:
                cand = lo - dphi_lo * width * width / denom
                lo_b, hi_b = sorted((lo + 0.1 * width, hi - 0.1 * width))
                if lo_b <= cand <= hi_b:
                    alpha = cand
        if alpha is None:
            alpha = lo + 0.5 * width
        phi_a = phi(alpha)
        if not np.isfinite(phi_a) or phi_a > phi0 + c1 * alpha * dphi0 or phi_a >= phi_lo:
            hi = alpha
            continue
        dphi_a = dphi(alpha)
        if abs(dphi_a) <= -c2 * dphi0:
            return alpha
        if dphi_a * (hi - lo) >= 0:
            hi = lo
        lo, phi_lo, dphi_lo = alpha, phi_a, dphi_a
    # budget exhausted: accept lo if it made progress
    return lo if lo > 0 else None


class _LineFunction:
    def __init__(self, obj: _Objective, x, p):
        self.obj, self.x, self.p = obj, x, p
        self.cache = {}
        self.grads = {}

    def __call__(self, alpha):
        if alpha not in self.cache:
            self.cache[alpha] = self.obj.f(self.x + alpha * self.p)
        return self.cache[alpha]

    def grad(self, alpha):
        if alpha not in self.grads:
            self.grads[alpha] = self.obj.g(self.x + alpha * self.p)
        return self.grads[alpha]

    def slope(self, alpha):
        return float(self.grad(alpha) @ self.p)


def wolfe_line_search(obj: _Objective, x, p, f0, g0, alpha0=1.0, c1=1e-4, c2=0.9,
                      max_evals=40):
    """Strong-Wolfe step length along descent direction ``p``; ``None`` on failure."""
    phi = _LineFunction(obj, x, p)
    phi.cache[0.0] = f0
    dphi0 = float(g0 @ p)
    if not dphi0 < 0:
        return None, phi
    a_prev, phi_prev, dphi_prev = 0.0, f0, dphi0
    alpha = alpha0
    for i in range(max_evals):
        phi_a = phi(alpha)
        if (not np.isfinite(phi_a) or phi_a > f0 + c1 * alpha * dphi0
                or (i > 0 and phi_a >= phi_prev)):
            a = _zoom(phi, phi.slope, a_prev, alpha, phi_prev, dphi_prev, f0, dphi0, c1, c2,
                      max_evals - i)
            return a, phi
        dphi_a = phi.slope(alpha)
        if abs(dphi_a) <= -c2 * dphi0:
            return alpha, phi
        if dphi_a >= 0:
            a = _zoom(phi, phi.slope, alpha, a_prev, phi_a, dphi_a, f0, dphi0, c1, c2,
                      max_evals - i)
            return a, phi
        a_prev, phi_prev, dphi_prev = alpha, phi_a, dphi_a
        alpha *= 2.0
    return a_prev if a_prev > 0 else None, phi


def default_init(data: Exceedances) -> ParamVector:
    """Intercept at the log mean death exceedance, other effects zero, xi = -0.1.

    When xi = -0.1 puts an observation past the implied endpoint, xi is pulled
    toward zero until every record is inside the support with margin.
    """
    deaths = data.y[data.event]
    mean_y = deaths.mean() if len(deaths) else data.y.mean()
    beta = np.zeros(data.Z.shape[1])
    beta[0] = np.log(mean_y)
    xi = DEFAULT_XI0
    theta = ParamVector(beta, xi)
    if not feasible(theta, data):
        ys_max = float(np.max(data.y * np.exp(-data.Z @ beta)))
        xi = -0.5 / ys_max
        theta = ParamVector(beta, xi)
    return theta


def _check_design(data: Exceedances):
    n_params = data.n_params
    if data.n_events < n_params:
        raise ValueError(
            f"need at least {n_params} observed deaths to fit {n_params} parameters, "
            f"got {data.n_events}")
    for j in range(1, data.Z.shape[1]):
        if not np.any(data.Z[:, j]):
            raise RankDeficientError(data.columns[j])


def _converged(g_ll, ll, opts) -> bool:
    return float(np.max(np.abs(g_ll))) < opts.grad_tol * max(1.0, abs(ll))


def bfgs_maximize(data: Exceedances, init: ParamVector, options: OptimizerOptions,
                  loglik_fn=log_likelihood, grad_fn=gradient):
    """Maximize ``loglik_fn`` from ``init``; returns (theta, loglik, grad, iterations, converged, msg)."""
    obj = _Objective(data, loglik_fn, grad_fn)
    x = init.as_array()
    f = obj.f(x)
    if not np.isfinite(f):
        raise ValueError("initial parameters are infeasible for the data")
    g = obj.g(x)
    H = np.eye(len(x))
    first = True
    message = "maximum iterations reached"
    it = 0
    resets = 0
    tight = OptimizerOptions(grad_tol=options.grad_tol * options.polish)
    for it in range(1, options.max_iter + 1):
        if _converged(g * obj.n, f * obj.n, tight):
            message = "gradient tolerance reached"
            it -= 1
            break
        p = -H @ g
        if not g @ p < 0:
            H = np.eye(len(x))
            p = -g
        alpha0 = 1.0
        if first:
            alpha0 = min(1.0, 0.1 / max(float(np.max(np.abs(p))), 1e-12))
        alpha, phi = wolfe_line_search(obj, x, p, f, g, alpha0, options.c1, options.c2,
                                       options.max_line_evals)
        if alpha is None:
            if resets == 0 and not first:
                H = np.eye(len(x))
                resets += 1
                continue
            message = "line search failed"
            break
        resets = 0
        step = alpha * p
        x_new = x + step
        f_new = phi(alpha)
        g_new = phi.grad(alpha)
        s, yv = step, g_new - g
        sy = float(s @ yv)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            if first:
                H = np.eye(len(x)) * sy / float(yv @ yv)
            rho = 1.0 / sy
            Hy = H @ yv
            H = (H - rho * (np.outer(s, Hy) + np.outer(Hy, s))
                 + (rho * rho * float(yv @ Hy) + rho) * np.outer(s, s))
        first = False
        rel_step = float(np.max(np.abs(step)) / max(1.0, float(np.max(np.abs(x)))))
        x, f, g = x_new, f_new, g_new
        if rel_step < options.step_tol:
            message = "parameter step below tolerance"
            break
    converged = _converged(g * obj.n, f * obj.n, options)
    if converged and message == "maximum iterations reached":
        message = "gradient tolerance reached"
    g_ll = -g * obj.n
    return ParamVector.from_array(x), -f * obj.n, g_ll, it, converged, message


def fit_mle(data: Exceedances, init: ParamVector | None = None,
            options: OptimizerOptions | None = None, *, covariance=True,
            loglik_fn=log_likelihood, grad_fn=gradient) -> FitResult:
    """Maximum-likelihood fit of (beta, xi).

    Non-convergence is reported through ``converged=False`` with the best point
    found. The covariance is the inverse observed information when the fit
    converged and ``covariance`` is true; otherwise a NaN matrix.
    """
    options = options or OptimizerOptions()
    _check_design(data)
    init = init if init is not None else default_init(data)
    theta, ll, g, iters, converged, msg = bfgs_maximize(data, init, options, loglik_fn, grad_fn)
    k = data.n_params
    cov = np.full((k, k), np.nan)
    if converged and covariance:
        cov = observed_fisher(theta, data, grad_fn=lambda t: grad_fn(t, data))
    if not converged:
        logger.warning("fit did not converge after %d iterations: %s", iters, msg)
    return FitResult(theta, ll, cov, converged, iters, float(np.max(np.abs(g))),
                     tuple(data.columns), len(data), msg, init)


def fd_hessian(grad_fn, theta) -> np.ndarray:
    """Central differences of an analytic gradient, symmetrized."""
    x = theta.as_array() if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)
    k = len(x)
    H = np.empty((k, k))
    for j in range(k):
        h = max(1e-5, 1e-5 * abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        H[:, j] = (np.asarray(grad_fn(ParamVector.from_array(xp)))
                   - np.asarray(grad_fn(ParamVector.from_array(xm)))) / (2.0 * h)
    return 0.5 * (H + H.T)


def observed_fisher(theta_hat, data: Exceedances | None = None, *, grad_fn=None) -> np.ndarray:
    """Covariance estimate: inverse of the negative finite-difference Hessian.

    ``grad_fn`` maps a ParamVector to the log-likelihood gradient; it defaults to
    the analytic gradient on ``data``.
    """
    if grad_fn is None:
        if data is None:
            raise ValueError("either data or grad_fn is required")
        grad_fn = lambda t: gradient(t, data)  # noqa: E731
    info = -fd_hessian(grad_fn, theta_hat)
    try:
        c = linalg.cho_factor(info, lower=True)
    except linalg.LinAlgError:
        raise NumericalError(
            "negative Hessian is not positive definite at the estimate; check the "
            "threshold choice and whether every covariate level has enough deaths") from None
    cov = linalg.cho_solve(c, np.eye(len(info)))
    return 0.5 * (cov + cov.T)


def wald_intervals(result: FitResult, level: float = 0.95) -> np.ndarray:
    """``(k, 2)`` array of ``estimate -/+ z * se`` rows."""
    if not 0 <= level < 1:
        raise ValueError("level must lie in [0, 1)")
    z = norm.ppf(0.5 + level / 2.0)
    est = result.params
    se = result.se
    return np.column_stack([est - z * se, est + z * se])
