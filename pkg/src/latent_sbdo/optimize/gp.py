"""Gaussian-process regression with a Matérn 3/2 kernel."""

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from .._validation import NumericalFailure, check_data, check_rows

SQRT3 = np.sqrt(3.0)
LOG_2PI = np.log(2.0 * np.pi)
MAX_NUGGET = 1e-2


def matern32(r, length_scale, signal_variance):
    a = SQRT3 * np.asarray(r) / length_scale
    return signal_variance * (1.0 + a) * np.exp(-a)


def _cholesky(K):
    try:
        L = linalg.cholesky(K, lower=True)
    except linalg.LinAlgError:
        return None
    # a pivot at round-off level means the matrix is singular in all but name
    if np.min(np.diag(L)) ** 2 < 1e-15 * np.max(np.diag(K)):
        return None
    return L


def _neg_lml(theta, r, y, nugget):
    """Negative log marginal likelihood and its gradient in ``(log l, log sf2)``."""
    ell, sf2 = np.exp(theta)
    a = SQRT3 * r / ell
    ea = np.exp(-a)
    R = (1.0 + a) * ea
    K = sf2 * R
    K[np.diag_indices_from(K)] += nugget
    L = _cholesky(K)
    if L is None:
        return 1e25, np.zeros(2)
    alpha = linalg.cho_solve((L, True), y)
    n = y.size
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI
    inner = np.outer(alpha, alpha) - linalg.cho_solve((L, True), np.eye(n))
    d_ell = sf2 * a**2 * ea
    grad = 0.5 * np.array([np.sum(inner * d_ell), np.sum(inner * K) - nugget * np.trace(inner)])
    return -lml, -grad


class GpSurrogate(RegressorMixin, BaseEstimator):
    """GP regressor with hyperparameters set by maximizing the marginal likelihood.

    Targets are standardized before fitting.  ``nugget`` is a diagonal jitter
    relative to the target variance; if the kernel matrix cannot be factored,
    the jitter is multiplied by 10 up to ``1e-2``.  The length-scale search
    range is ``length_scale_bounds`` times ``input_scale`` (the diagonal of the
    training inputs' bounding box when not given).
    """

    def __init__(self, nugget=1e-8, length_scale_bounds=(1e-3, 10.0), signal_variance_bounds=(1e-6, 1e3),
                 input_scale=None, n_restarts=4, cap_percentile=None, random_state=None):
        self.nugget = nugget
        self.length_scale_bounds = length_scale_bounds
        self.signal_variance_bounds = signal_variance_bounds
        self.input_scale = input_scale
        self.n_restarts = n_restarts
        self.cap_percentile = cap_percentile
        self.random_state = random_state

    def fit(self, X, y):
        X = check_data(X, min_samples=2)
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.shape[0] != X.shape[0]:
            raise ValueError("inputs and targets disagree on the number of rows")
        if np.unique(X, axis=0).shape[0] < 2:
            raise ValueError("need at least 2 distinct inputs")
        if self.cap_percentile is not None:
            y = np.minimum(y, np.percentile(y, self.cap_percentile))
        rng = check_random_state(self.random_state)
        self.X_train_ = X
        self.y_train_ = y
        self.n_features_in_ = X.shape[1]
        self.y_mean_ = float(y.mean())
        std = float(y.std())
        self.y_std_ = std if std > 0 else 1.0
        ys = (y - self.y_mean_) / self.y_std_
        scale = self.input_scale or float(np.linalg.norm(np.ptp(X, axis=0))) or 1.0
        bounds = np.log([np.asarray(self.length_scale_bounds) * scale, self.signal_variance_bounds])
        r = cdist(X, X)

        nugget = self.nugget
        while True:
            theta = self._optimize(r, ys, nugget, bounds, rng)
            ell, sf2 = np.exp(theta)
            K = matern32(r, ell, sf2)
            K[np.diag_indices_from(K)] += nugget
            L = _cholesky(K)
            if L is not None:
                break
            if nugget >= MAX_NUGGET:
                raise NumericalFailure("kernel matrix not positive definite at the largest nugget")
            nugget = min(nugget * 10.0, MAX_NUGGET)
        self.length_scale_ = float(ell)
        self.signal_variance_ = float(sf2)
        self.nugget_ = float(nugget)
        self.L_ = L
        self.alpha_ = linalg.cho_solve((L, True), ys)
        self.log_marginal_likelihood_ = -float(_neg_lml(theta, r, ys, nugget)[0])
        return self

    def _optimize(self, r, ys, nugget, bounds, rng):
        lo, hi = bounds[:, 0], bounds[:, 1]
        # fixed start part way up the log length-scale range with unit signal variance, then random starts
        starts = [np.clip([lo[0] + 0.6 * (hi[0] - lo[0]), 0.0], lo, hi)]
        starts += [lo + (hi - lo) * rng.random(2) for _ in range(self.n_restarts)]
        best = None
        for x0 in starts:
            res = optimize.minimize(_neg_lml, x0, args=(r, ys, nugget), jac=True, method="L-BFGS-B",
                                    bounds=list(zip(lo, hi)))
            if best is None or res.fun < best.fun:
                best = res
        return best.x

    def log_marginal_likelihood(self, theta, X=None, y=None):
        """Value and gradient at ``theta = (log l, log sf2)`` on the training (or given) data."""
        X = self.X_train_ if X is None else X
        y = self.y_train_ if y is None else np.asarray(y, dtype=np.float64)
        ys = (y - self.y_mean_) / self.y_std_
        value, grad = _neg_lml(np.asarray(theta, dtype=np.float64), cdist(X, X), ys, self.nugget_)
        return -value, -grad

    def predict(self, X, return_std=False):
        check_is_fitted(self, "alpha_")
        mean, var = self._posterior(check_rows(X, self.n_features_in_))
        return (mean, np.sqrt(var)) if return_std else mean

    def _posterior(self, X):
        ks = matern32(cdist(X, self.X_train_), self.length_scale_, self.signal_variance_)
        mean = ks @ self.alpha_
        v = linalg.solve_triangular(self.L_, ks.T, lower=True)
        var = np.maximum(self.signal_variance_ - np.sum(v**2, axis=0), 0.0)
        return self.y_mean_ + self.y_std_ * mean, self.y_std_**2 * var


def gp_fit(inputs, targets, **params):
    return GpSurrogate(**params).fit(inputs, targets)


def gp_predict(surrogate, x):
    """Posterior mean and variance (scalars for a single input vector)."""
    check_is_fitted(surrogate, "alpha_")
    single = np.ndim(x) == 1
    mean, var = surrogate._posterior(check_rows(x, surrogate.n_features_in_))
    return (float(mean[0]), float(var[0])) if single else (mean, var)


def lcb(surrogate, x, kappa=1.0):
    mean, var = gp_predict(surrogate, x)
    return mean - kappa * np.sqrt(var)
