"""Quick invariant checks runnable from the CLI without a test runner."""

import numpy as np

from . import hull
from .density import GaussianDensity, iqr_threshold, volume_ratio
from .ffd import FreeFormDeformation, bernstein_weights, deform
from .latent import PPCA, FactorAnalysis
from .optimize import direct_minimize
from .problem import penalty_value


def _ffd_affinity():
    spec = hull.HullSpec(n_stations=11, n_girth=7)
    g = hull.make_hull(spec)
    lattices = hull.default_lattices(spec)
    ffd = FreeFormDeformation(g, lattices).fit()
    rng = np.random.default_rng(0)
    v1, v2 = (ffd.lower_ + (ffd.upper_ - ffd.lower_) * rng.random(ffd.lower_.size) for _ in range(2))
    a, b = 0.3, 0.7
    lhs = deform(g, lattices, a * v1 + b * v2) - g
    rhs = a * (deform(g, lattices, v1) - g) + b * (deform(g, lattices, v2) - g)
    return np.abs(lhs - rhs).max() < 1e-10


def _partition_of_unity():
    chi = np.linspace(0, 1, 101)
    local = np.stack([chi, chi[::-1], np.full_like(chi, 0.3)], axis=1)
    return np.abs(bernstein_weights(local, (10, 7, 3)).sum(axis=1) - 1).max() < 1e-13


def _woodbury():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(300, 12)) @ rng.normal(size=(12, 12))
    ok = True
    for model in (PPCA(n_components=3).fit(X), FactorAnalysis(n_components=3).fit(X)):
        d = GaussianDensity.from_model(model)
        ok &= np.abs(d.apply_inverse(np.eye(12)) @ d.covariance() - np.eye(12)).max() < 1e-8
        ok &= d.mahalanobis_sq(d.mean) == 0.0
    return bool(ok)


def _em_monotone():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 2)) @ rng.normal(size=(2, 10)) + 0.3 * rng.normal(size=(200, 10))
    ok = True
    for model in (PPCA(n_components=2, method="em", init="random", random_state=0, max_iter=100),
                  FactorAnalysis(n_components=2, max_iter=100, random_state=0)):
        trace = np.array(model.fit(X).log_likelihood_trace_)
        ok &= bool(np.all(np.diff(trace) >= -1e-9 * np.abs(trace[1:])))
    return ok


def _iqr():
    return iqr_threshold(np.arange(1.0, 9.0)).phi_max == 11.5


def _volume():
    return abs(volume_ratio(2) - np.pi / 4) < 1e-12


def _direct():
    f = lambda x: float(np.sum((x - [1 / 3, 2 / 3]) ** 2))
    x1, _, log1 = direct_minimize(f, [0, 0], [1, 1], 200)
    _, _, log2 = direct_minimize(f, [0, 0], [1, 1], 200)
    return np.linalg.norm(x1 - [1 / 3, 2 / 3]) < 0.02 and np.array_equal(log1.inputs, log2.inputs)


def _penalty():
    return penalty_value([0.1]) == 150.0


CHECKS = [("ffd affinity", _ffd_affinity), ("bernstein partition of unity", _partition_of_unity),
          ("woodbury inverse", _woodbury), ("em monotone", _em_monotone), ("iqr threshold", _iqr),
          ("volume ratio", _volume), ("direct", _direct), ("penalty", _penalty)]


def run_selftest(echo=print):
    ok = True
    for name, check in CHECKS:
        passed = bool(check())
        ok &= passed
        echo(f"{'PASS' if passed else 'FAIL'} {name}")
    return ok
