"""Linear-Gaussian regression of throughput on the actionable service variables."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .domain import ServiceKind

FEATURES = {
    ServiceKind.CV: ("quality", "model_size", "cores"),
    ServiceKind.QR: ("quality", "cores"),
}


class RankDeficientError(ValueError):
    def __init__(self, predictor: str):
        super().__init__(f"design matrix is rank deficient: predictor {predictor!r} adds no information")
        self.predictor = predictor


def design(samples, kind: ServiceKind):
    """Feature matrix and throughput vector from samples of one service."""
    names = FEATURES[kind]
    rows = [s for s in samples if s.service == kind]
    X = np.array([[getattr(s, n) for n in names] for s in rows], dtype=float).reshape(len(rows), len(names))
    y = np.array([s.throughput for s in rows], dtype=float)
    return X, y


def config_row(config, kind: ServiceKind) -> np.ndarray:
    return np.array([getattr(config, n) for n in FEATURES[kind]], dtype=float)


class LinearGaussianRegressor(RegressorMixin, BaseEstimator):
    """Ordinary least squares with a Gaussian residual.

    Parameters
    ----------
    feature_names : tuple of str, optional
        Used only to name the offending predictor in rank errors.
    clip : tuple of float
        Range that predictions and samples are clamped to.

    Attributes
    ----------
    coef_ : ndarray
        Intercept followed by one slope per predictor.
    sigma_ : float
        Residual standard deviation (ddof = number of coefficients).
    """

    def __init__(self, feature_names=None, clip=(0.0, 100.0)):
        self.feature_names = feature_names
        self.clip = clip

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        n, p = X.shape
        if n < p + 2:
            raise ValueError(f"need at least {p + 2} samples for {p} predictors, got {n}")
        A = np.column_stack([np.ones(n), X])
        names = ("intercept",) + tuple(self.feature_names or (f"x{i}" for i in range(p)))
        rank = 1
        for j in range(1, p + 1):
            r = np.linalg.matrix_rank(A[:, : j + 1])
            if r <= rank:
                raise RankDeficientError(names[j])
            rank = r
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        self.coef_ = coef
        self.intercept_ = coef[0]
        self.sigma_ = float(np.sqrt(resid @ resid / max(n - (p + 1), 1)))
        self.n_samples_ = n
        ss_tot = float(((y - y.mean()) ** 2).sum())
        self.r2_ = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
        self.n_features_in_ = p
        return self

    def mean(self, X):
        """Unclamped linear prediction."""
        check_is_fitted(self)
        X = check_array(X)
        return self.coef_[0] + X @ self.coef_[1:]

    def predict(self, X):
        lo, hi = self.clip
        return np.clip(self.mean(X), lo, hi)

    def sample(self, X, random_state=None):
        rng = np.random.default_rng(random_state)
        mu = self.mean(X)
        lo, hi = self.clip
        return np.clip(mu + self.sigma_ * rng.standard_normal(mu.shape), lo, hi)
