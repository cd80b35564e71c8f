"""Constraint evaluators, the penalty rule and the full-space / latent-space problems."""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import hull
from .density import GaussianDensity
from .ffd import as_points

SENTINEL_VIOLATION = 1.0


@dataclass(frozen=True)
class Penalty:
    h: float = 50.0
    psi: float = 1000.0


def penalty_value(violations, h=50.0, psi=1000.0):
    v = np.asarray(list(violations), dtype=np.float64)
    if np.any(v < 0):
        raise ValueError("violations must be nonnegative")
    return float(h + psi * v.sum())


@dataclass(frozen=True)
class ConstraintSpec:
    """Relative tolerances against the baseline measurements."""

    beam: float = 0.05
    draft: float = 0.05
    length: float = 0.01
    displacement: float = 0.01
    dome: bool = True


class HullConstraints:
    """Geometric constraint violations ``max(0, g - a)`` keyed by name."""

    def __init__(self, baseline, hull_spec=None, tolerances=None):
        self.hull_spec = hull_spec or hull.HullSpec()
        self.tolerances = tolerances or ConstraintSpec()
        self.baseline = np.asarray(baseline, dtype=np.float64)
        self.reference = self.measure(self.baseline)

    def measure(self, x):
        s = self.hull_spec
        m = {
            "beam": hull.beam(x),
            "draft": hull.draft(x, s.waterline_z),
            "length": hull.length_overall(x),
            "displacement": hull.displacement_volume(x, s),
        }
        if self.tolerances.dome:
            m["dome"] = hull.dome_volume(x, s)
        return m

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        names = ["beam", "draft", "length", "displacement"] + (["dome"] if self.tolerances.dome else [])
        if not np.all(np.isfinite(x)):
            return {n: SENTINEL_VIOLATION for n in names}, True
        m = self.measure(x)
        ref = self.reference
        tol = self.tolerances
        out = {
            "beam": abs(m["beam"] - ref["beam"]) - tol.beam * ref["beam"],
            "draft": abs(m["draft"] - ref["draft"]) - tol.draft * ref["draft"],
            "length": abs(m["length"] - ref["length"]) - tol.length * ref["length"],
            "displacement": abs(m["displacement"] - ref["displacement"]) - tol.displacement * ref["displacement"],
        }
        if tol.dome:
            out["dome"] = ref["dome"] - m["dome"]
        out = {k: max(0.0, float(v)) for k, v in out.items()}
        degenerate = not all(np.isfinite(v) for v in out.values())
        if degenerate:
            out = {k: (v if np.isfinite(v) else SENTINEL_VIOLATION) for k, v in out.items()}
        return out, degenerate


def hull_constraints(x, baseline, hull_spec=None, tolerances=None):
    return HullConstraints(baseline, hull_spec, tolerances)(x)[0]


# ---------------------------------------------------------------------------
# synthetic resistance

@dataclass(frozen=True)
class ResistanceSpec:
    seed: int = 7
    n_proj: int = 10
    w_wetted: float = 0.2
    w_curvature: float = 0.1
    w_wave: float = 1.0
    amplitude: float = 0.05
    frequency: float = 6.0
    target_fraction: float = 0.6
    version: int = 1


def _smooth_fields(points, n, rng, n_modes=3):
    """``n`` random low-frequency fields on the point cloud, one row per field, unit norm."""
    lo, hi = points.min(axis=0), points.max(axis=0)
    unit = (points - lo) / np.where(hi > lo, hi - lo, 1.0)
    rows = np.zeros((n, points.size))
    for r in range(n):
        f = np.zeros_like(points)
        for _ in range(n_modes):
            k = rng.integers(0, 3, size=3)
            phase = rng.uniform(0, 2 * np.pi)
            wave = np.cos(np.pi * unit @ k + phase)
            f += wave[:, None] * rng.normal(size=3)[None, :]
        rows[r] = f.ravel()
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


class SyntheticResistance:
    """Deterministic smooth nonconvex stand-in for a resistance solver.

    ``f(x) = w_s S(x)/S0 + w_c C(x)/C0 + w_w (|A (p - p*)|^2 + a sum sin(w p + phase))``
    with ``p = P (x - g0) / scale`` a 10-dimensional projection on smooth
    random fields.  The planted target ``p*`` is the projection of
    ``target`` (a geometry displacement), so its optimum is a realizable shape.
    """

    def __init__(self, baseline, hull_spec=None, spec=None, target=None):
        self.baseline = np.asarray(baseline, dtype=np.float64)
        self.hull_spec = hull_spec or hull.HullSpec()
        self.spec = spec or ResistanceSpec()
        s = self.spec
        rng = np.random.default_rng([s.seed, s.version])
        self.projection = _smooth_fields(as_points(self.baseline), s.n_proj, rng)
        q, _ = np.linalg.qr(rng.normal(size=(s.n_proj, s.n_proj)))
        self.mixing = q * np.sqrt(np.linspace(1.0, 4.0, s.n_proj))[None, :]
        self.phase = rng.uniform(0, 2 * np.pi, s.n_proj)
        if target is None:
            target = np.zeros_like(self.baseline)
        target = np.asarray(target, dtype=np.float64)
        self.target_displacement = target
        norm = np.linalg.norm(target)
        self.scale = s.target_fraction * norm if norm > 0 else 1.0
        self.target = self.project(self.baseline + target)
        self.area0 = hull.wetted_area(self.baseline, self.hull_spec)
        self.curv0 = self._curvature(self.baseline)

    def project(self, x):
        return self.projection @ (np.asarray(x) - self.baseline) / self.scale

    def _curvature(self, x):
        g = hull.grid_points(x, self.hull_spec)
        d2 = g[2:, :, 1:] - 2.0 * g[1:-1, :, 1:] + g[:-2, :, 1:]
        return float(np.sum(d2**2))

    def wave(self, x):
        s = self.spec
        p = self.project(x)
        quad = float(np.sum((self.mixing @ (p - self.target)) ** 2))
        return quad + s.amplitude * float(np.sum(np.sin(s.frequency * p + self.phase)))

    def __call__(self, x):
        s = self.spec
        x = np.asarray(x, dtype=np.float64)
        return (s.w_wetted * hull.wetted_area(x, self.hull_spec) / self.area0
                + s.w_curvature * self._curvature(x) / self.curv0
                + s.w_wave * self.wave(x))


def planted_target(deformation, seed, feasible=None, spread=1.0, max_tries=1000):
    """Displacement of a random feasible design.

    Each variable is drawn uniformly from the central ``spread`` fraction of its range.
    """
    rng = np.random.default_rng([seed, 1])
    lo, hi = deformation.lower_, deformation.upper_
    a, b = 0.5 - 0.5 * spread, 0.5 + 0.5 * spread
    for _ in range(max_tries):
        v = lo + (hi - lo) * rng.uniform(a, b, lo.size)
        x = deformation.transform(v[None, :])[0]
        if feasible is None or feasible(x):
            return x - deformation.baseline_
    raise RuntimeError("no feasible target found")


def synthetic_resistance(x, model):
    return model(x)


# ---------------------------------------------------------------------------
# problems

@dataclass
class _Problem:
    constraints: HullConstraints
    objective: object
    penalty: Penalty = field(default_factory=Penalty)

    def _finish(self, x, violations, degenerate, d2=None, extra=None):
        info = {"violations": violations, "degenerate": degenerate}
        if d2 is not None:
            info["d2"] = float(d2)
        info.update(extra or {})
        if degenerate or any(v > 0 for v in violations.values()):
            info.update(feasible=False, evaluated=False)
            return penalty_value(violations.values(), self.penalty.h, self.penalty.psi), info
        info.update(feasible=True, evaluated=True)
        return float(self.objective(x)), info


class FullSpaceProblem(_Problem):
    """Design vector -> deformed geometry -> penalty or objective."""

    def __init__(self, deformation, constraints, objective, penalty=None, density=None):
        super().__init__(constraints, objective, penalty or Penalty())
        self.deformation = deformation
        self.density = density

    @property
    def bounds(self):
        return self.deformation.lower_, self.deformation.upper_

    def geometry(self, v):
        return self.deformation.transform(np.atleast_2d(v))[0]

    def __call__(self, v):
        try:
            x = self.geometry(v)
        except ValueError:
            names = list(self.constraints.reference)
            return self._finish(None, {n: SENTINEL_VIOLATION for n in names}, True)
        violations, degenerate = self.constraints(x)
        d2 = self.density.mahalanobis_sq(x) if self.density is not None else None
        return self._finish(x, violations, degenerate, d2)


class LatentProblem(_Problem):
    """Latent vector -> decoded geometry -> constraints (+ anomaly) -> penalty or objective.

    When ``threshold`` is given, ``d2 > phi_max`` adds the violation
    ``(d2 - phi_max) / phi_max``.  ``density`` defaults to the model's own
    Gaussian marginal.
    """

    def __init__(self, model, constraints, objective, bounds, penalty=None, threshold=None, density=None):
        super().__init__(constraints, objective, penalty or Penalty())
        self.model = model
        self.lower, self.upper = (np.asarray(b, dtype=np.float64) for b in bounds)
        self.threshold = threshold
        if density is None and threshold is not None:
            density = GaussianDensity.from_model(model)
        self.density = density

    @property
    def bounds(self):
        return self.lower, self.upper

    def geometry(self, z):
        return self.model.inverse_transform(np.atleast_2d(z))[0]

    def __call__(self, z):
        x = self.geometry(z)
        violations, degenerate = self.constraints(x)
        d2 = None
        if self.density is not None:
            d2 = self.density.mahalanobis_sq(x)
        if self.threshold is not None:
            phi = self.threshold.phi_max
            violations["anomaly"] = max(0.0, (d2 - phi) / phi)
        return self._finish(x, violations, degenerate, d2)


def problem_summary(problem):
    out = {"penalty": asdict(problem.penalty), "tolerances": asdict(problem.constraints.tolerances)}
    if isinstance(problem.objective, SyntheticResistance):
        out["objective"] = asdict(problem.objective.spec)
    return out
