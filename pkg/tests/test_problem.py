import numpy as np
import pytest

from latent_sbdo import hull
from latent_sbdo.density import GaussianDensity, threshold_phi_max
from latent_sbdo.latent import PPCA
from latent_sbdo.problem import (ConstraintSpec, FullSpaceProblem, HullConstraints, LatentProblem, Penalty,
                                 ResistanceSpec, SyntheticResistance, hull_constraints, penalty_value,
                                 planted_target, problem_summary)


@pytest.fixture(scope="module")
def objective(baseline, hull_spec, deformation, feasible):
    return SyntheticResistance(baseline, hull_spec, target=planted_target(deformation, 7, feasible))


@pytest.fixture(scope="module")
def ppca(hull_dataset):
    return PPCA(variance_threshold=0.99).fit(hull_dataset.X)


@pytest.fixture(scope="module")
def threshold(ppca, hull_dataset):
    return threshold_phi_max(ppca, hull_dataset.X)


class TestPenalty:
    def test_values(self):
        assert penalty_value([0.1]) == 150.0
        assert penalty_value([0.01, 0.02]) == pytest.approx(80.0, abs=1e-12)
        assert penalty_value([]) == 50.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            penalty_value([0.1, -0.01])


class TestConstraints:
    def test_baseline_is_feasible(self, baseline, hull_spec):
        assert all(v == 0 for v in hull_constraints(baseline, baseline, hull_spec).values())

    def test_wider_hull_violates_beam(self, baseline, hull_spec):
        c = HullConstraints(baseline, hull_spec)
        pts = baseline.reshape(-1, 3).copy()
        pts[:, 1] *= 1.1
        violations, degenerate = c(pts.ravel())
        assert not degenerate
        assert violations["beam"] == pytest.approx(0.05 * c.reference["beam"], rel=1e-12)
        assert violations["draft"] == 0 and violations["length"] == 0

    def test_hollowed_dome(self, baseline, hull_spec):
        g = hull.grid_points(baseline, hull_spec).copy()
        near = np.abs(g[:, :, 0] - hull_spec.dome.center_x) < 0.03
        g[near, 1] *= 0.05
        violations, _ = HullConstraints(baseline, hull_spec)(g.ravel())
        assert violations["dome"] > 0

    def test_dome_can_be_disabled(self, baseline, hull_spec):
        c = HullConstraints(baseline, hull_spec, ConstraintSpec(dome=False))
        assert "dome" not in c(baseline)[0]

    def test_non_finite_geometry(self, baseline, hull_spec):
        x = baseline.copy()
        x[4] = np.nan
        violations, degenerate = HullConstraints(baseline, hull_spec)(x)
        assert degenerate and all(v > 0 for v in violations.values())


class TestResistance:
    def test_deterministic(self, baseline, hull_spec, objective):
        again = SyntheticResistance(baseline, hull_spec, target=objective.target_displacement)
        assert objective(baseline) == again(baseline)
        assert objective(baseline) == objective(baseline.copy())

    def test_lipschitz(self, baseline, objective, rng):
        d = rng.normal(size=baseline.size)
        d /= np.linalg.norm(d)
        f0 = objective(baseline)
        diffs = [abs(objective(baseline + h * d) - f0) / h for h in (1e-6, 1e-7, 1e-8)]
        assert max(diffs) < 1e3
        assert diffs[0] == pytest.approx(diffs[1], rel=0.05)

    def test_planted_optimum_beats_baseline(self, baseline, objective):
        x_star = baseline + objective.target_displacement
        assert np.allclose(objective.project(x_star), objective.target)
        assert objective.wave(x_star) < objective.wave(baseline)
        assert objective(x_star) < objective(baseline)

    def test_seed_changes_objective(self, baseline, hull_spec, objective):
        other = SyntheticResistance(baseline, hull_spec, ResistanceSpec(seed=8),
                                    target=objective.target_displacement)
        assert other(baseline) != objective(baseline)


class TestFullSpace:
    def test_zero_is_baseline(self, deformation, constraints, objective, baseline):
        f, info = FullSpaceProblem(deformation, constraints, objective)(np.zeros(21))
        assert info["evaluated"] and f == objective(baseline)

    def test_compositional_oracle(self, deformation, constraints, objective, rng):
        problem = FullSpaceProblem(deformation, constraints, objective)
        lo, hi = problem.bounds
        n_penalized = 0
        for _ in range(20):
            v = lo + (hi - lo) * rng.random(lo.size)
            x = deformation.transform(v[None])[0]
            violations, _ = constraints(x)
            if any(t > 0 for t in violations.values()):
                expected = 50 + 1000 * sum(violations.values())
                n_penalized += 1
            else:
                expected = objective(x)
            f, info = problem(v)
            assert f == pytest.approx(expected, rel=1e-12)
            assert info["evaluated"] == (not any(t > 0 for t in info["violations"].values()))
        assert 0 < n_penalized < 20

    def test_violating_design_is_penalized(self, deformation, constraints, objective):
        f, info = FullSpaceProblem(deformation, constraints, objective)(deformation.upper_ * 40)
        assert f >= 50 and not info["evaluated"]


class TestLatent:
    def test_mean_design(self, ppca, constraints, objective, threshold, hull_dataset):
        problem = LatentProblem(ppca, constraints, objective, ppca.latent_bounds(hull_dataset.X),
                                threshold=threshold)
        _, info = problem(np.zeros(ppca.n_components_))
        assert info["d2"] < 1e-12
        assert info["violations"]["anomaly"] == 0

    def test_far_latent_is_anomalous(self, ppca, constraints, objective, threshold, hull_dataset):
        lo, hi = ppca.latent_bounds(hull_dataset.X)
        problem = LatentProblem(ppca, constraints, objective, (lo, hi), threshold=threshold)
        rng = np.random.default_rng(0)
        for _ in range(10):
            z = 10 * np.where(rng.random(lo.size) < 0.5, lo, hi)
            f, info = problem(z)
            assert info["violations"]["anomaly"] > 0
            assert f >= 50 and not info["evaluated"]

    def test_without_threshold_is_plain_composition(self, ppca, constraints, objective, hull_dataset, rng):
        lo, hi = ppca.latent_bounds(hull_dataset.X)
        problem = LatentProblem(ppca, constraints, objective, (lo, hi))
        for _ in range(10):
            z = lo + (hi - lo) * rng.random(lo.size)
            x = ppca.inverse_transform(z[None])[0]
            violations, _ = constraints(x)
            penalized = any(t > 0 for t in violations.values())
            expected = penalty_value(violations.values()) if penalized else objective(x)
            f, info = problem(z)
            assert f == expected and "anomaly" not in info["violations"]

    def test_doubling_threshold_penalizes_fewer(self, ppca, constraints, objective, threshold, hull_dataset):
        from dataclasses import replace
        lo, hi = ppca.latent_bounds(hull_dataset.X)
        Z = lo + (hi - lo) * np.random.default_rng(3).random((60, lo.size))
        counts = []
        for scale in (1.0, 2.0, 4.0):
            problem = LatentProblem(ppca, constraints, objective, (lo, hi),
                                    threshold=replace(threshold, phi_max=scale * threshold.phi_max))
            counts.append(sum(problem(z)[1]["violations"]["anomaly"] > 0 for z in Z))
        assert counts[0] >= counts[1] >= counts[2]
        assert counts[0] > 0

    def test_penalty_constants_used(self, ppca, constraints, objective, threshold, hull_dataset):
        lo, hi = ppca.latent_bounds(hull_dataset.X)
        problem = LatentProblem(ppca, constraints, objective, (lo, hi), Penalty(h=7.0, psi=2.0),
                                threshold=threshold)
        f, info = problem(10 * hi)
        assert f == pytest.approx(7.0 + 2.0 * sum(info["violations"].values()))
        summary = problem_summary(problem)
        assert summary["penalty"] == {"h": 7.0, "psi": 2.0}

    def test_density_matches_model(self, ppca, threshold, constraints, objective, hull_dataset):
        problem = LatentProblem(ppca, constraints, objective, ppca.latent_bounds(hull_dataset.X),
                                threshold=threshold)
        z = np.full(ppca.n_components_, 0.001)
        x = ppca.inverse_transform(z[None])[0]
        assert problem(z)[1]["d2"] == pytest.approx(GaussianDensity.from_model(ppca).mahalanobis_sq(x))
