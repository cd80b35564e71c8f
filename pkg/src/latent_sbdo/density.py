"""Gaussian marginal of a fitted latent model and Mahalanobis anomaly scoring."""

import hashlib
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, OutlierMixin, clone
from sklearn.utils.validation import check_is_fitted

from ._validation import InsufficientDataError, check_data, check_rows
from .latent import LOG_2PI, FactorAnalysis, PPCA


class GaussianDensity:
    """``N(mean, W W.T + Psi)`` with the inverse applied through the Woodbury identity.

    For PPCA (``noise`` a scalar) the inverse is
    ``sigma^-2 (I - W M^-1 W.T)`` with ``M = W.T W + sigma^2 I``; for FA
    (``noise`` a vector) it is ``Psi^-1 - Psi^-1 W G W.T Psi^-1`` with
    ``G = (I + W.T Psi^-1 W)^-1``.  Only ``K x K`` matrices are inverted.
    """

    def __init__(self, mean, loadings, noise, kind=None):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.loadings = np.asarray(loadings, dtype=np.float64)
        d, k = self.loadings.shape
        if self.mean.shape != (d,):
            raise ValueError("mean and loadings disagree on the dimension")
        noise = np.asarray(noise, dtype=np.float64)
        self.isotropic = noise.ndim == 0
        if np.any(noise <= 0):
            raise FloatingPointError("noise variances must be strictly positive")
        self.noise = noise
        self.kind = kind or ("ppca" if self.isotropic else "fa")
        W = self.loadings
        if self.isotropic:
            self._core = linalg.inv(W.T @ W + float(noise) * np.eye(k))
            self.log_det = float((d - k) * np.log(noise) + np.linalg.slogdet(W.T @ W + noise * np.eye(k))[1])
        else:
            cap = np.eye(k) + W.T @ (W / noise[:, None])
            self._core = linalg.inv(cap)
            self.log_det = float(np.sum(np.log(noise)) + np.linalg.slogdet(cap)[1])

    @classmethod
    def from_model(cls, model):
        check_is_fitted(model, "loadings_")
        if isinstance(model, PPCA):
            return cls(model.mean_, model.loadings_, model.noise_variance_, "ppca")
        if isinstance(model, FactorAnalysis):
            return cls(model.mean_, model.loadings_, model.noise_variance_, "fa")
        raise TypeError(f"{type(model).__name__} does not define a density")

    @property
    def dim(self):
        return self.mean.shape[0]

    def apply_inverse(self, R):
        """Rows of ``R @ C^-1``."""
        R = np.atleast_2d(R)
        W = self.loadings
        if self.isotropic:
            return (R - (R @ W) @ self._core @ W.T) / self.noise
        Rp = R / self.noise
        return Rp - ((Rp @ W) @ self._core @ W.T) / self.noise

    def mahalanobis_sq(self, X):
        """Squared Mahalanobis distance of each row from the mean (0-d for a vector)."""
        single = np.ndim(X) == 1
        R = check_rows(X, self.dim) - self.mean
        d2 = np.einsum("ij,ij->i", self.apply_inverse(R), R)
        d2 = np.maximum(d2, 0.0)
        return float(d2[0]) if single else d2

    def log_density(self, X):
        d2 = self.mahalanobis_sq(X)
        return -0.5 * (self.dim * LOG_2PI + self.log_det + d2)

    def covariance(self):
        noise = np.full(self.dim, self.noise) if self.isotropic else self.noise
        return self.loadings @ self.loadings.T + np.diag(noise)

    def shifted(self, offset):
        return GaussianDensity(self.mean + offset, self.loadings, self.noise, self.kind)


def mahalanobis_sq(density, x):
    return density.mahalanobis_sq(x)


def log_density(density, x):
    return density.log_density(x)


def dataset_hash(X):
    X = np.ascontiguousarray(X, dtype="<f8")
    h = hashlib.sha256()
    h.update(np.asarray(X.shape, dtype="<i8").tobytes())
    h.update(X.tobytes())
    return h.hexdigest()


@dataclass
class AnomalyThreshold:
    """Upper limit on the squared Mahalanobis distance.

    ``phi_max`` is the selected value; both candidate rules are kept:
    ``fence`` is ``q3 + 1.5 IQR`` and ``literal`` is ``1.5 IQR``.
    """

    phi_max: float
    q1: float
    q3: float
    fence: float
    literal: float
    rule: str
    n: int
    dataset_hash: str = ""

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def quartiles(values):
    """First and third quartiles with linear interpolation between order statistics."""
    q1, q3 = np.percentile(np.asarray(values, dtype=np.float64), [25.0, 75.0], method="linear")
    return float(q1), float(q3)


def iqr_threshold(distances, rule="fence", dataset_hash=""):
    distances = np.asarray(distances, dtype=np.float64).ravel()
    if distances.size < 4:
        raise InsufficientDataError(f"need at least 4 distances for quartiles, got {distances.size}")
    q1, q3 = quartiles(distances)
    iqr = q3 - q1
    fence = q3 + 1.5 * iqr
    literal = 1.5 * iqr
    if rule == "fence":
        phi = fence
    elif rule == "literal":
        phi = literal
    else:
        raise ValueError(f"unknown threshold rule {rule!r}")
    return AnomalyThreshold(phi_max=float(phi), q1=q1, q3=q3, fence=float(fence), literal=float(literal),
                            rule=rule, n=int(distances.size), dataset_hash=dataset_hash)


def reconstruction_distances(model, X, density=None):
    """Encode, decode and score every row of ``X``."""
    density = density or GaussianDensity.from_model(model)
    return density.mahalanobis_sq(model.reconstruct(X))


def threshold_phi_max(model, X, rule="fence"):
    X = check_data(X)
    if X.shape[0] < 4:
        raise InsufficientDataError(f"need at least 4 training rows, got {X.shape[0]}")
    d2 = reconstruction_distances(model, X)
    return iqr_threshold(d2, rule=rule, dataset_hash=dataset_hash(X))


def uniform_latent_distances(model, bounds, n, rng, density=None, scale=1.0):
    """Distances of designs decoded from ``z ~ U(scale * bounds)``."""
    density = density or GaussianDensity.from_model(model)
    lower, upper = (scale * np.asarray(b) for b in bounds)
    Z = lower + (upper - lower) * rng.random((n, lower.size))
    return density.mahalanobis_sq(model.inverse_transform(Z))


# ---------------------------------------------------------------------------
# chi-square reference law

def _gamma_series(a, x):
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_fraction(a, x):
    """Upper regularized gamma Q(a, x) by the modified Lentz method."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-17:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma_lower(a, x):
    """``P(a, x) = gamma(a, x) / Gamma(a)`` for scalar ``a > 0``, ``x >= 0``."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(_gamma_series(a, x), 1.0)
    return max(1.0 - _gamma_cont_fraction(a, x), 0.0)


def chi2_cdf(x, dof):
    x = np.asarray(x, dtype=np.float64)
    out = np.array([regularized_gamma_lower(0.5 * dof, 0.5 * v) for v in x.ravel()])
    return out.reshape(x.shape) if x.ndim else float(out[0])


@dataclass
class KsResult:
    statistic: float
    n: int
    dof: int
    critical_05: float


def chi_square_diagnostic(distances, dof):
    """Kolmogorov-Smirnov distance between the empirical law of ``distances`` and chi2(dof)."""
    d = np.sort(np.asarray(distances, dtype=np.float64).ravel())
    if d.size == 0:
        raise InsufficientDataError("no distances")
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    if dof < 1:
        raise ValueError("dof must be >= 1")
    n = d.size
    cdf = chi2_cdf(d, dof)
    i = np.arange(1, n + 1)
    ks = max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n))
    return KsResult(statistic=float(ks), n=n, dof=int(dof), critical_05=1.358 / math.sqrt(n))


def volume_ratio(dim):
    """Volume of a unit ball over that of its circumscribing cube ``[-1, 1]^dim``."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return math.exp(0.5 * dim * math.log(math.pi) - dim * math.log(2.0) - math.lgamma(0.5 * dim + 1.0))


class MahalanobisOutlierDetector(OutlierMixin, BaseEstimator):
    """Outlier detector that fits a latent model and flags ``d2 > phi_max``.

    ``predict`` returns +1 for inliers and -1 for anomalous rows, following the
    scikit-learn outlier-detector convention.
    """

    def __init__(self, model=None, rule="fence"):
        self.model = model
        self.rule = rule

    def fit(self, X, y=None):
        X = check_data(X, min_samples=4)
        self.model_ = clone(self.model if self.model is not None else PPCA(variance_threshold=0.99)).fit(X)
        self.density_ = GaussianDensity.from_model(self.model_)
        self.threshold_ = threshold_phi_max(self.model_, X, rule=self.rule)
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X):
        check_is_fitted(self, "threshold_")
        return -np.atleast_1d(self.density_.mahalanobis_sq(check_rows(X, self.n_features_in_)))

    def decision_function(self, X):
        return self.score_samples(X) + self.threshold_.phi_max

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)
