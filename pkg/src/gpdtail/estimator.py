"""scikit-learn compatible wrappers: a reference-level dummy encoder and the GPD regressor."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .design import Covariate, CovariateSchema, Exceedances
from .fit import OptimizerOptions, fit_mle, wald_intervals
from .likelihood import ParamVector, log_likelihood


class ProfileEncoder(TransformerMixin, BaseEstimator):
    """Dummy-encode categorical columns against one reference level each.

    Parameters
    ----------
    reference : {"most_exposed"} or dict
        ``"most_exposed"`` picks the level with the largest total
        ``sample_weight`` (exposure) per column; a dict maps column names to
        explicit reference labels.
    categories : "auto" or list of lists
        Category order per column; ``"auto"`` sorts the observed labels.
    """

    def __init__(self, reference="most_exposed", categories="auto"):
        self.reference = reference
        self.categories = categories

    def fit(self, X, y=None, sample_weight=None):
        names = getattr(X, "columns", None)
        X = check_array(X, dtype=None)
        self.n_features_in_ = X.shape[1]
        names = [str(c) for c in names] if names is not None else [f"x{j}" for j in range(X.shape[1])]
        self.feature_names_in_ = np.asarray(names, dtype=object)
        w = np.ones(X.shape[0]) if sample_weight is None else column_or_1d(sample_weight)
        covs = []
        self.categories_ = []
        self.reference_ = []
        for j, name in enumerate(names):
            col = X[:, j].astype(str)
            if self.categories == "auto":
                cats = sorted(set(col.tolist()))
            else:
                cats = [str(c) for c in self.categories[j]]
                unknown = set(col.tolist()) - set(cats)
                if unknown:
                    raise ValueError(f"column {name!r} has unknown labels {sorted(unknown)}")
            if isinstance(self.reference, dict) and name in self.reference:
                ref = str(self.reference[name])
            elif self.reference == "most_exposed" or isinstance(self.reference, dict):
                totals = [w[col == c].sum() for c in cats]
                ref = cats[int(np.argmax(totals))]
            else:
                raise ValueError(f"unsupported reference={self.reference!r}")
            covs.append(Covariate(name, tuple(cats), ref))
            self.categories_.append(np.asarray(cats, dtype=object))
            self.reference_.append(ref)
        self.schema_ = CovariateSchema(tuple(covs))
        return self

    def transform(self, X):
        check_is_fitted(self, "schema_")
        X = check_array(X, dtype=None)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        blocks = []
        for j, cov in enumerate(self.schema_.covariates):
            col = X[:, j].astype(str)
            bad = set(col.tolist()) - set(cov.categories)
            if bad:
                raise ValueError(f"column {cov.name!r} has unknown labels {sorted(bad)}")
            blocks.append(np.column_stack([col == lvl for lvl in cov.levels])
                          if cov.levels else np.empty((len(col), 0)))
        return np.hstack(blocks).astype(float) if blocks else np.empty((X.shape[0], 0))

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "schema_")
        return np.asarray(self.schema_.columns[1:], dtype=object)


class TruncatedGPDRegressor(BaseEstimator):
    """GPD model for ages beyond ``threshold`` with scale ``exp(intercept + X @ coef)``.

    ``fit(X, y, entry_age=None, event=None)`` takes numeric features ``X``, the
    age at last observation ``y``, the age at entry into observation (defaults
    to no delayed entry) and the death indicator (defaults to all deaths).
    Rows with ``y <= threshold`` are ignored. ``predict`` returns the implied
    maximum age per row, ``inf`` when the fitted shape is not negative.
    """

    def __init__(self, threshold=100.0, max_iter=500, grad_tol=1e-6, step_tol=1e-9,
                 level=0.95):
        self.threshold = threshold
        self.max_iter = max_iter
        self.grad_tol = grad_tol
        self.step_tol = step_tol
        self.level = level

    def _exceedances(self, X, y, entry_age, event):
        X = check_array(X, ensure_min_features=0)
        y = column_or_1d(y).astype(float)
        if len(y) != X.shape[0]:
            raise ValueError("X and y have inconsistent lengths")
        # no entry ages: observed from the threshold (or from exit, for rows dropped below it)
        entry = np.minimum(y, float(self.threshold)) if entry_age is None else \
            column_or_1d(entry_age).astype(float)
        ev = np.ones(len(y), dtype=bool) if event is None else column_or_1d(event).astype(bool)
        if np.any(y < entry):
            raise ValueError("age at last observation below age at entry")
        keep = y > self.threshold
        Z = np.column_stack([np.ones(int(keep.sum())), X[keep]])
        names = getattr(self, "feature_names_", None) or [f"x{j}" for j in range(X.shape[1])]
        return X, Exceedances(y[keep] - self.threshold,
                              np.maximum(entry[keep] - self.threshold, 0.0),
                              ev[keep], Z, ("intercept", *names), int((~keep).sum()))

    def fit(self, X, y, entry_age=None, event=None):
        cols = getattr(X, "columns", None)
        self.feature_names_ = [str(c) for c in cols] if cols is not None else None
        X, data = self._exceedances(X, y, entry_age, event)
        self.n_features_in_ = X.shape[1]
        opts = OptimizerOptions(max_iter=self.max_iter, grad_tol=self.grad_tol,
                                step_tol=self.step_tol)
        res = fit_mle(data, options=opts)
        self.result_ = res
        self.intercept_ = float(res.beta[0])
        self.coef_ = res.beta[1:].copy()
        self.xi_ = res.xi
        self.covariance_ = res.covariance
        self.loglik_ = res.loglik
        self.n_iter_ = res.iterations
        self.converged_ = res.converged
        self.n_exceedances_ = len(data)
        return self

    def _eta(self, X):
        check_is_fitted(self, "result_")
        X = check_array(X, ensure_min_features=0)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.intercept_ + X @ self.coef_

    def predict_scale(self, X):
        return np.exp(self._eta(X))

    def predict(self, X):
        sigma = self.predict_scale(X)
        if not self.xi_ < 0:
            return np.full(len(sigma), np.inf)
        return self.threshold - sigma / self.xi_

    def confidence_intervals(self):
        """Wald intervals at ``level`` for (intercept, coef..., xi)."""
        check_is_fitted(self, "result_")
        return wald_intervals(self.result_, self.level)

    def score(self, X, y, entry_age=None, event=None):
        """Mean log-likelihood per exceedance."""
        check_is_fitted(self, "result_")
        _, data = self._exceedances(X, y, entry_age, event)
        theta = ParamVector(np.append(self.intercept_, self.coef_), self.xi_)
        return log_likelihood(theta, data) / len(data)
