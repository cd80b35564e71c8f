import math

import numpy as np
import pytest
from scipy import special, stats

from latent_sbdo._validation import InsufficientDataError
from latent_sbdo.density import (AnomalyThreshold, GaussianDensity, MahalanobisOutlierDetector, chi2_cdf,
                                 chi_square_diagnostic, iqr_threshold, log_density, mahalanobis_sq,
                                 regularized_gamma_lower, threshold_phi_max, uniform_latent_distances,
                                 volume_ratio)
from latent_sbdo.latent import PCA, PPCA, FactorAnalysis


def random_density(kind, d, k, seed):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(d, k))
    noise = 0.5 if kind == "ppca" else rng.uniform(0.1, 2.0, d)
    return GaussianDensity(rng.normal(size=d), W, noise, kind)


@pytest.mark.parametrize("kind", ["ppca", "fa"])
def test_woodbury_inverse(kind):
    dens = random_density(kind, 50, 6, seed=0)
    C = dens.covariance()
    assert np.abs(dens.apply_inverse(np.eye(50)) @ C - np.eye(50)).max() < 1e-8
    assert abs(dens.log_det - np.linalg.slogdet(C)[1]) < 1e-8 * abs(dens.log_det)


@pytest.mark.parametrize("kind", ["ppca", "fa"])
def test_mahalanobis_against_dense_inverse(kind):
    dens = random_density(kind, 20, 4, seed=1)
    X = np.random.default_rng(2).normal(size=(50, 20)) * 3
    R = X - dens.mean
    dense = np.einsum("ij,jk,ik->i", R, np.linalg.inv(dens.covariance()), R)
    assert np.abs(dens.mahalanobis_sq(X) - dense).max() < 1e-8 * dense.max()
    assert np.all(dens.mahalanobis_sq(X) >= 0)


def test_distance_zero_at_mean():
    dens = random_density("fa", 20, 3, seed=3)
    assert mahalanobis_sq(dens, dens.mean) == 0.0


def test_identity_covariance_is_euclidean(rng):
    dens = GaussianDensity(np.zeros(7), np.zeros((7, 1)), 1.0)
    X = rng.normal(size=(30, 7))
    assert np.abs(dens.mahalanobis_sq(X) - np.sum(X**2, axis=1)).max() < 1e-12


@pytest.mark.parametrize("kind", ["ppca", "fa"])
def test_log_density_matches_scipy(kind):
    dens = random_density(kind, 15, 3, seed=4)
    X = np.random.default_rng(5).normal(size=(20, 15))
    ref = stats.multivariate_normal(dens.mean, dens.covariance()).logpdf(X)
    assert np.abs(log_density(dens, X) - ref).max() < 1e-8 * np.abs(ref).max()


def test_log_density_order_and_differences(rng):
    dens = random_density("ppca", 10, 2, seed=6)
    pts = np.stack([dens.mean, dens.mean + dens.loadings[:, 0]])
    assert np.argmax(dens.log_density(pts)) == 0
    X = rng.normal(size=(2, 10))
    lhs = np.diff(dens.log_density(X))[0]
    assert abs(lhs + 0.5 * np.diff(dens.mahalanobis_sq(X))[0]) < 1e-10


def test_translation_covariance(rng):
    dens = random_density("fa", 12, 3, seed=7)
    t = rng.normal(size=12)
    x = rng.normal(size=12)
    assert dens.shifted(t).mahalanobis_sq(x + t) == pytest.approx(dens.mahalanobis_sq(x), rel=1e-12)


def test_pca_has_no_density(rng):
    with pytest.raises(TypeError):
        GaussianDensity.from_model(PCA(n_components=2).fit(rng.normal(size=(20, 5))))


class TestThreshold:
    def test_hand_example(self):
        t = iqr_threshold(np.arange(1.0, 9.0))
        assert (t.q1, t.q3, t.phi_max) == (2.75, 6.25, 11.5)
        assert t.literal == 5.25

    def test_quartiles_match_numpy_linear(self, rng):
        d = rng.exponential(size=101)
        q1, q3 = np.quantile(d, [0.25, 0.75])
        t = iqr_threshold(d)
        assert t.q1 == pytest.approx(q1) and t.q3 == pytest.approx(q3)
        assert t.phi_max >= t.q3 >= t.q1 >= 0

    def test_equal_distances(self):
        assert iqr_threshold(np.full(10, 3.5)).phi_max == 3.5

    def test_too_few(self):
        with pytest.raises(InsufficientDataError):
            iqr_threshold([1.0, 2.0, 3.0])
        with pytest.raises(InsufficientDataError):
            threshold_phi_max(PPCA(n_components=1), np.zeros((3, 4)))

    def test_literal_rule(self):
        t = iqr_threshold(np.arange(1.0, 9.0), rule="literal")
        assert t.phi_max == 5.25 and t.fence == 11.5

    def test_round_trip(self):
        t = iqr_threshold(np.arange(1.0, 9.0), dataset_hash="abc")
        assert AnomalyThreshold.from_dict(t.to_dict()) == t

    def test_uses_reconstructions(self, rng):
        X = rng.normal(size=(200, 3)) @ rng.normal(size=(3, 10)) + 0.1 * rng.normal(size=(200, 10))
        m = PPCA(n_components=3).fit(X)
        dens = GaussianDensity.from_model(m)
        ref = iqr_threshold(dens.mahalanobis_sq(m.inverse_transform(m.transform(X))))
        assert threshold_phi_max(m, X).phi_max == pytest.approx(ref.phi_max, rel=1e-12)


class TestChiSquare:
    @pytest.mark.parametrize("dof", [1, 2, 5, 12, 50, 300])
    def test_cdf_against_scipy(self, dof):
        x = np.concatenate([np.linspace(0.01, 4 * dof, 40), [dof - 1e-3, dof + 1e-3]])
        ours = chi2_cdf(x, dof)
        ref = special.gammainc(dof / 2, x / 2)
        assert np.all(np.abs(ours - ref) <= 1e-10 * np.maximum(ref, 1e-300) + 1e-15)

    def test_cdf_limits(self):
        assert chi2_cdf(0.0, 5) == 0.0
        assert chi2_cdf(np.inf, 5) == 1.0
        assert regularized_gamma_lower(1.0, 2.0) == pytest.approx(1 - math.exp(-2.0), rel=1e-14)

    def test_true_law(self):
        d = np.random.default_rng(0).chisquare(5, size=5000)
        assert chi_square_diagnostic(d, 5).statistic < 0.03

    def test_gross_mismatch(self):
        d = np.random.default_rng(0).chisquare(5, size=5000)
        assert chi_square_diagnostic(d, 50).statistic > 0.5

    def test_matches_scipy_kstest(self):
        d = np.random.default_rng(1).chisquare(7, size=300) * 1.1
        ref = stats.kstest(d, stats.chi2(7).cdf).statistic
        assert chi_square_diagnostic(d, 7).statistic == pytest.approx(ref, abs=1e-10)

    def test_invalid(self):
        with pytest.raises(ValueError):
            chi_square_diagnostic([-1.0, 2.0], 3)
        with pytest.raises(ValueError):
            chi_square_diagnostic([1.0], 0)


class TestVolume:
    def test_known_values(self):
        assert abs(volume_ratio(2) - math.pi / 4) < 1e-12
        assert abs(volume_ratio(6) - math.pi**3 / 384) < 1e-12
        assert abs(volume_ratio(6) - 0.0807) < 5e-4
        assert volume_ratio(1) == pytest.approx(1.0, abs=1e-15)

    def test_decreasing(self):
        v = [volume_ratio(d) for d in range(1, 51)]
        assert np.all(np.diff(v) < 0) and v[-1] < 1e-20

    def test_monte_carlo(self):
        u = np.random.default_rng(0).uniform(-1, 1, size=(200000, 3))
        frac = np.mean(np.sum(u**2, axis=1) <= 1)
        assert abs(frac - volume_ratio(3)) < 5e-3

    def test_invalid(self):
        with pytest.raises(ValueError):
            volume_ratio(0)


def test_uniform_distances_grow_with_scale(rng):
    X = rng.normal(size=(300, 4)) @ rng.normal(size=(4, 15)) + 0.2 * rng.normal(size=(300, 15))
    m = PPCA(n_components=4).fit(X)
    bounds = m.latent_bounds(X)
    scales = np.linspace(0.2, 2.0, 10)
    med = [np.median(uniform_latent_distances(m, bounds, 500, np.random.default_rng(i), scale=s))
           for i, s in enumerate(scales)]
    assert stats.spearmanr(scales, med).statistic > 0.8


class TestDetector:
    def test_flags_far_points(self, rng):
        X = rng.normal(size=(300, 3)) @ rng.normal(size=(3, 10)) + 0.1 * rng.normal(size=(300, 10))
        det = MahalanobisOutlierDetector(PPCA(n_components=3)).fit(X)
        far = X[:5] + 50 * rng.normal(size=(5, 10))
        assert np.all(det.predict(far) == -1)
        inliers = det.predict(det.model_.reconstruct(X)) == 1
        assert np.mean(inliers) > 0.9
        assert np.allclose(det.decision_function(X), det.threshold_.phi_max + det.score_samples(X))

    def test_fa_model(self, rng):
        X = rng.normal(size=(300, 2)) @ rng.normal(size=(2, 8)) + rng.normal(size=(300, 8)) * 0.3
        det = MahalanobisOutlierDetector(FactorAnalysis(n_components=2)).fit(X)
        assert det.density_.kind == "fa"
        assert det.get_params()["rule"] == "fence"
