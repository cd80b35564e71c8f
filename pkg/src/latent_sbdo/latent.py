"""Linear latent-variable models: PCA, probabilistic PCA and factor analysis.

All three are scikit-learn style transformers: ``transform`` encodes rows into
the latent space and ``inverse_transform`` decodes latent vectors back to
geometries.  Fitting works on the thin SVD of the centred data rather than on
the ``D x D`` covariance, since the geometry dimension can be far larger than
the number of samples.  The covariance is represented by its factor ``F``
(``S = F.T @ F``, one row per retained singular value).
"""

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import NumericalFailure, RankDeficiencyError, check_data, check_rows

LOG_2PI = np.log(2.0 * np.pi)

# Relative eigenvalue cutoff defining the effective rank.
RANK_RTOL = 1e-12


class IllPosedComponentsError(ValueError):
    """The K-th eigenvalue does not exceed the noise estimate."""


class _Spectrum:
    """Mean, eigen-spectrum and covariance factor of a data matrix."""

    def __init__(self, X):
        n = X.shape[0]
        self.n_samples = n
        self.mean = X.mean(axis=0)
        _, xi, vt = linalg.svd(X - self.mean, full_matrices=False, lapack_driver="gesdd")
        self.eigenvalues = xi**2 / n
        self.directions = vt.T
        lam1 = self.eigenvalues[0] if self.eigenvalues.size else 0.0
        self.effective_rank = int(np.count_nonzero(self.eigenvalues > RANK_RTOL * lam1)) if lam1 > 0 else 0
        self.total_variance = float(self.eigenvalues.sum())
        r = self.effective_rank
        self.factor = np.sqrt(self.eigenvalues[:r])[:, None] * vt[:r]

    def diag(self):
        return np.einsum("ij,ij->j", self.factor, self.factor)


def _select_k(fractions, threshold):
    """Smallest K whose cumulative explained fraction reaches ``threshold``."""
    hits = np.flatnonzero(fractions >= threshold - 1e-12)
    if hits.size == 0:
        return None
    return int(hits[0]) + 1


class _LatentBase(TransformerMixin, BaseEstimator):

    def _resolve_k(self, spectrum):
        if self.n_components is not None:
            return int(self.n_components)
        if self.variance_threshold is None:
            raise ValueError("set n_components or variance_threshold")
        cumulative = np.cumsum(spectrum.eigenvalues) / spectrum.total_variance
        k = _select_k(cumulative, self.variance_threshold)
        return k if k is not None else spectrum.effective_rank

    def _check_rank(self, spectrum, k):
        if k < 1:
            raise ValueError(f"n_components must be >= 1, got {k}")
        if k > spectrum.effective_rank:
            raise RankDeficiencyError(
                f"n_components={k} exceeds the effective rank {spectrum.effective_rank} of the centred data",
                spectrum.effective_rank)

    def inverse_transform(self, Z):
        """Decode latent vectors: ``W z + mean``."""
        check_is_fitted(self, "loadings_")
        Z = check_rows(Z, self.n_components_, name="latent vectors")
        return Z @ self.loadings_.T + self.mean_

    def reconstruct(self, X):
        return self.inverse_transform(self.transform(X))

    def latent_bounds(self, X):
        """Column-wise min and max of the encoded rows of ``X``."""
        Z = self.transform(X)
        return Z.min(axis=0), Z.max(axis=0)

    @property
    def n_features_(self):
        return self.mean_.shape[0]


class PCA(_LatentBase):
    """Deterministic PCA through the thin SVD of the centred data.

    Parameters
    ----------
    n_components : int, optional
        Latent dimension K.  When omitted, the smallest K reaching
        ``variance_threshold`` of the total variance is used.
    variance_threshold : float, optional
        Explained-variance target used when ``n_components`` is None.
    """

    kind = "pca"

    def __init__(self, n_components=None, variance_threshold=None):
        self.n_components = n_components
        self.variance_threshold = variance_threshold

    def fit(self, X, y=None):
        X = check_data(X, min_samples=2)
        spec = _Spectrum(X)
        k = self._resolve_k(spec)
        self._check_rank(spec, k)
        self.mean_ = spec.mean
        self.loadings_ = spec.directions[:, :k].copy()
        self.eigenvalues_ = spec.eigenvalues[:k].copy()
        self.spectrum_ = spec.eigenvalues.copy()
        self.total_variance_ = spec.total_variance
        self.effective_rank_ = spec.effective_rank
        self.n_components_ = k
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Orthogonal projection coordinates ``U.T (x - mean)``."""
        check_is_fitted(self, "loadings_")
        X = check_rows(X, self.n_features_)
        return (X - self.mean_) @ self.loadings_

    def covariance(self):
        return (self.loadings_ * self.eigenvalues_) @ self.loadings_.T


def _ppca_loglik(factor, n, d, W, sigma2):
    """Total log-likelihood of n samples with sample covariance ``factor.T @ factor``."""
    k = W.shape[1]
    M = W.T @ W + sigma2 * np.eye(k)
    cho = linalg.cho_factor(M)
    logdet = (d - k) * np.log(sigma2) + 2.0 * np.sum(np.log(np.diag(cho[0])))
    FW = factor @ W
    trace_s = float(np.sum(factor * factor))
    trace_inv = (trace_s - np.sum(FW * linalg.cho_solve(cho, FW.T).T)) / sigma2
    return -0.5 * n * (d * LOG_2PI + logdet + trace_inv)


class PPCA(_LatentBase):
    """Probabilistic PCA with isotropic noise.

    ``method='closed'`` uses the closed-form maximum-likelihood solution with
    loadings ``U (Lambda - sigma2 I)^(1/2)``; ``method='em'`` runs EM from the
    closed-form solution (``init='closed'``) or from random loadings
    (``init='random'``).  The noise variance is the mean of the discarded
    eigenvalues inside the effective rank, which keeps it away from zero when
    the geometry dimension exceeds the number of samples.

    Attributes
    ----------
    loadings_ : ndarray of shape (n_features, n_components)
    noise_variance_ : float
    log_likelihood_trace_ : list of float
        Total marginal log-likelihood after each EM iteration (EM only).
    """

    kind = "ppca"

    def __init__(self, n_components=None, variance_threshold=None, method="closed",
                 max_iter=500, tol=1e-8, init="closed", random_state=None):
        self.n_components = n_components
        self.variance_threshold = variance_threshold
        self.method = method
        self.max_iter = max_iter
        self.tol = tol
        self.init = init
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_data(X, min_samples=2)
        spec = _Spectrum(X)
        n, d = X.shape
        k = self._resolve_k(spec)
        self._check_rank(spec, k)
        if k >= min(n - 1, d):
            raise RankDeficiencyError(
                f"n_components={k} leaves no discarded eigenvalues (need < {min(n - 1, d)})",
                spec.effective_rank)
        W, sigma2 = self._closed_form(spec, k)
        self.mean_ = spec.mean
        self.spectrum_ = spec.eigenvalues.copy()
        self.eigenvalues_ = spec.eigenvalues[:k].copy()
        self.total_variance_ = spec.total_variance
        self.effective_rank_ = spec.effective_rank
        self.n_components_ = k
        self.n_features_in_ = d
        self.log_likelihood_trace_ = []
        self.n_iter_ = 0
        if self.method == "em":
            if self.init == "random":
                rng = np.random.default_rng(self.random_state)
                scale = np.sqrt(spec.total_variance / (d * k))
                W = rng.standard_normal((d, k)) * scale
                sigma2 = spec.total_variance / d
            W, sigma2 = self._em(spec, W, sigma2, d)
        elif self.method != "closed":
            raise ValueError(f"unknown method {self.method!r}")
        self.loadings_ = W
        self.noise_variance_ = float(sigma2)
        return self

    def _closed_form(self, spec, k):
        lam = spec.eigenvalues
        r = spec.effective_rank
        discarded = lam[k:r]
        if discarded.size:
            sigma2 = float(discarded.mean())
        else:
            tail = lam[k:min(spec.n_samples - 1, lam.size)]
            sigma2 = max(float(tail.mean()) if tail.size else 0.0, 1e-14 * lam[0])
        if lam[k - 1] <= sigma2 * (1 + 1e-9):
            raise IllPosedComponentsError(
                f"eigenvalue {k} ({lam[k - 1]:.3g}) does not exceed the noise variance {sigma2:.3g}")
        W = spec.directions[:, :k] * np.sqrt(lam[:k] - sigma2)
        return W, sigma2

    def _em(self, spec, W, sigma2, d):
        F = spec.factor
        n = spec.n_samples
        k = W.shape[1]
        trace_s = float(np.sum(F * F))
        prev = _ppca_loglik(F, n, d, W, sigma2)
        trace = [prev]
        for it in range(1, self.max_iter + 1):
            M = W.T @ W + sigma2 * np.eye(k)
            Minv = linalg.inv(M, overwrite_a=True)
            SW = F.T @ (F @ W)
            W_new = SW @ linalg.inv(sigma2 * np.eye(k) + Minv @ W.T @ SW)
            sigma2 = (trace_s - np.sum((SW @ Minv) * W_new)) / d
            W = W_new
            ll = _ppca_loglik(F, n, d, W, sigma2) if sigma2 > 0 else np.nan
            if not np.isfinite(ll):
                raise NumericalFailure(f"PPCA EM produced a non-finite likelihood at iteration {it}", it)
            trace.append(ll)
            self.n_iter_ = it
            if (ll - prev) / abs(prev) < self.tol:
                break
            prev = ll
        self.log_likelihood_trace_ = trace
        return W, sigma2

    def _m_inv(self):
        k = self.n_components_
        return linalg.inv(self.loadings_.T @ self.loadings_ + self.noise_variance_ * np.eye(k))

    def transform(self, X):
        """Posterior mean ``M^-1 W.T (x - mean)``."""
        check_is_fitted(self, "loadings_")
        X = check_rows(X, self.n_features_)
        return (X - self.mean_) @ self.loadings_ @ self._m_inv()

    def posterior_covariance(self):
        """``sigma2 M^-1``; the same for every input."""
        check_is_fitted(self, "loadings_")
        return self.noise_variance_ * self._m_inv()

    def covariance(self):
        """Dense marginal covariance ``W W.T + sigma2 I`` (small problems only)."""
        d = self.n_features_
        return self.loadings_ @ self.loadings_.T + self.noise_variance_ * np.eye(d)

    def noise_vector(self):
        return np.full(self.n_features_, self.noise_variance_)


def _fa_loglik(factor, n, W, psi):
    k = W.shape[1]
    Wp = W / psi[:, None]
    cap = np.eye(k) + W.T @ Wp
    cho = linalg.cho_factor(cap)
    logdet = np.sum(np.log(psi)) + 2.0 * np.sum(np.log(np.diag(cho[0])))
    diag_s = np.einsum("ij,ij->j", factor, factor)
    FWp = factor @ Wp
    trace_inv = np.sum(diag_s / psi) - np.sum(FWp * linalg.cho_solve(cho, FWp.T).T)
    d = psi.size
    return -0.5 * n * (d * LOG_2PI + logdet + trace_inv)


class FactorAnalysis(_LatentBase):
    """Factor analysis ``x = W z + mean + eps`` with diagonal noise, fitted by EM.

    Uniquenesses are floored at ``psi_floor_ratio`` times the mean diagonal of
    the sample covariance; features that hit the floor are reported in
    ``heywood_``.  EM starts from the closed-form PPCA loadings with the
    uniquenesses set to the unexplained part of each variance.
    """

    kind = "fa"

    def __init__(self, n_components=None, variance_threshold=None, max_iter=500, tol=1e-8,
                 init="ppca", psi_floor_ratio=1e-6, random_state=None, k_max=None):
        self.n_components = n_components
        self.variance_threshold = variance_threshold
        self.max_iter = max_iter
        self.tol = tol
        self.init = init
        self.psi_floor_ratio = psi_floor_ratio
        self.random_state = random_state
        self.k_max = k_max

    def fit(self, X, y=None):
        X = check_data(X, min_samples=2)
        spec = _Spectrum(X)
        if self.n_components is not None:
            self._fit_k(spec, X.shape[1], int(self.n_components))
            return self
        if self.variance_threshold is None:
            raise ValueError("set n_components or variance_threshold")
        k_max = self.k_max or spec.effective_rank
        for k in range(1, k_max + 1):
            self._fit_k(spec, X.shape[1], k)
            if self.explained_variance_fraction(k) >= self.variance_threshold - 1e-12:
                break
        return self

    def _fit_k(self, spec, d, k):
        n = spec.n_samples
        self._check_rank(spec, k)
        if n <= k:
            raise RankDeficiencyError(f"need more samples than factors (N={n}, K={k})", spec.effective_rank)
        F = spec.factor
        diag_s = spec.diag()
        floor = self.psi_floor_ratio * diag_s.mean()
        if self.init == "random":
            rng = np.random.default_rng(self.random_state)
            W = rng.standard_normal((d, k)) * np.sqrt(diag_s.mean() / k)
            psi = np.maximum(diag_s, floor)
        else:
            lam = spec.eigenvalues
            r = spec.effective_rank
            sigma2 = lam[k:r].mean() if r > k else 0.0
            W = spec.directions[:, :k] * np.sqrt(np.maximum(lam[:k] - sigma2, 0.0))
            psi = np.maximum(diag_s - np.sum(W * W, axis=1), floor)
        prev = _fa_loglik(F, n, W, psi)
        trace = [prev]
        n_iter = 0
        for it in range(1, self.max_iter + 1):
            Wp = W / psi[:, None]
            G = linalg.inv(np.eye(k) + W.T @ Wp)
            beta_t = Wp @ G
            S_beta = F.T @ (F @ beta_t)
            W = S_beta @ linalg.inv(G + beta_t.T @ S_beta)
            psi = np.maximum(diag_s - np.sum(W * S_beta, axis=1), floor)
            ll = _fa_loglik(F, n, W, psi)
            if not np.isfinite(ll):
                raise NumericalFailure(f"FA EM produced a non-finite likelihood at iteration {it}", it)
            trace.append(ll)
            n_iter = it
            if (ll - prev) / abs(prev) < self.tol:
                break
            prev = ll
        order = np.argsort(-np.sum(W * W, axis=0), kind="stable")
        self.mean_ = spec.mean
        self.loadings_ = W[:, order]
        self.noise_variance_ = psi
        self.psi_floor_ = floor
        self.heywood_ = np.flatnonzero(psi <= floor)
        self.log_likelihood_trace_ = trace
        self.n_iter_ = n_iter
        self.total_variance_ = spec.total_variance
        self.spectrum_ = spec.eigenvalues.copy()
        self.effective_rank_ = spec.effective_rank
        self.n_components_ = k
        self.n_features_in_ = d

    def _g(self):
        W, psi = self.loadings_, self.noise_variance_
        return linalg.inv(np.eye(self.n_components_) + W.T @ (W / psi[:, None]))

    def transform(self, X):
        """Posterior mean ``W.T C^-1 (x - mean)``, evaluated as ``G W.T Psi^-1 (x - mean)``."""
        check_is_fitted(self, "loadings_")
        X = check_rows(X, self.n_features_)
        return ((X - self.mean_) / self.noise_variance_) @ self.loadings_ @ self._g()

    def posterior_covariance(self):
        """``G = (I + W.T Psi^-1 W)^-1``; the same for every input."""
        check_is_fitted(self, "loadings_")
        return self._g()

    def covariance(self):
        return self.loadings_ @ self.loadings_.T + np.diag(self.noise_variance_)

    def noise_vector(self):
        return self.noise_variance_.copy()

    def communalities(self):
        return np.sum(self.loadings_**2, axis=1)


def explained_variance_fraction(model, k):
    """Fraction of the total sample variance captured by the first ``k`` components.

    PCA and PPCA use the leading eigenvalues; FA uses the squared column norms
    of the loadings (columns are stored in decreasing norm order).
    """
    check_is_fitted(model, "loadings_")
    if not 0 <= k <= model.n_components_:
        raise ValueError(f"k must be in 0..{model.n_components_}")
    if k == 0:
        return 0.0
    if isinstance(model, FactorAnalysis):
        captured = np.sum(model.loadings_[:, :k] ** 2)
    else:
        captured = np.sum(model.eigenvalues_[:k])
    return float(min(captured / model.total_variance_, 1.0))


for _cls in (PCA, PPCA, FactorAnalysis):
    _cls.explained_variance_fraction = explained_variance_fraction


def marginal_log_likelihood(model, X):
    """Total log-likelihood ``sum_n log N(x_n | mean, C)`` under a PPCA or FA model.

    The determinant comes from the matrix determinant lemma and the quadratic
    forms from the Woodbury identity; ``C`` is never formed.
    """
    check_is_fitted(model, "loadings_")
    X = check_rows(X, model.n_features_)
    n = X.shape[0]
    factor = (X - model.mean_) / np.sqrt(n)
    if isinstance(model, PPCA):
        if not model.noise_variance_ > 0:
            raise FloatingPointError("PPCA noise variance must be positive")
        return float(_ppca_loglik(factor, n, model.n_features_, model.loadings_, model.noise_variance_))
    if isinstance(model, FactorAnalysis):
        if not np.all(model.noise_variance_ > 0):
            raise FloatingPointError("FA uniquenesses must be positive")
        return float(_fa_loglik(factor, n, model.loadings_, model.noise_variance_))
    raise TypeError(f"no density for {type(model).__name__}")


def make_model(kind, **params):
    """Construct an unfitted model from its kind tag (``pca``, ``ppca`` or ``fa``)."""
    classes = {"pca": PCA, "ppca": PPCA, "fa": FactorAnalysis}
    try:
        return classes[kind](**params)
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}") from None
