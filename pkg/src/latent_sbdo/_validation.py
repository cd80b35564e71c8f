"""Input validation helpers shared by the estimators and the geometry code."""

import numpy as np
from sklearn.utils.validation import check_array


class RankDeficiencyError(ValueError):
    """Requested more components than the data supports."""

    def __init__(self, message, effective_rank):
        super().__init__(message)
        self.effective_rank = effective_rank


class NumericalFailure(RuntimeError):
    """An iterative fit produced a non-finite or diverging objective."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class InsufficientDataError(ValueError):
    pass


def check_data(X, min_samples=1):
    """Return ``X`` as a finite 2-D float64 array with at least ``min_samples`` rows."""
    X = check_array(X, dtype=np.float64, ensure_min_samples=min_samples)
    return X


def check_vector(x, size=None, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {x.shape}")
    if size is not None and x.shape[0] != size:
        raise ValueError(f"{name} has length {x.shape[0]}, expected {size}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


def check_rows(X, n_features, name="X"):
    """Accept a single vector or a batch; always return a 2-D array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_features:
        raise ValueError(f"{name} has shape {X.shape}, expected (*, {n_features})")
    return X


def check_bounds(lower, upper):
    lower = np.asarray(lower, dtype=np.float64).ravel()
    upper = np.asarray(upper, dtype=np.float64).ravel()
    if lower.shape != upper.shape:
        raise ValueError("lower and upper bounds differ in length")
    if not np.all(lower < upper):
        bad = np.flatnonzero(~(lower < upper))
        raise ValueError(f"lower < upper violated at indices {bad.tolist()}")
    return lower, upper
