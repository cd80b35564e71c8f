"""Free-form deformation of a discretized geometry.

A geometry is a flat float array ``[x0, y0, z0, x1, y1, z1, ...]`` of length
``3 * L``.  Each lattice is a parallelepiped spanned by three edge vectors from
an origin; its control points sit on a regular ``(t1+1, t2+1, t3+1)`` grid and
displacements are blended with a tensor product of Bernstein polynomials.
Design variables displace one or more control points along one Cartesian axis,
so the map from design vector to geometry is affine: ``x(v) = g0 + A v``.
"""

from collections import deque
from dataclasses import dataclass, field
from math import comb

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_bounds, check_rows, check_vector

# Local coordinates this far outside [0, 1] are treated as on the face.
FACE_TOLERANCE = 1e-9


class InvalidLatticeError(ValueError):
    pass


class OutOfLatticeError(ValueError):
    pass


class InfeasibleSpaceError(RuntimeError):
    pass


def as_points(geometry):
    """View a flat geometry as an ``(L, 3)`` array of points."""
    geometry = np.asarray(geometry, dtype=np.float64)
    if geometry.ndim != 1 or geometry.shape[0] % 3:
        raise ValueError(f"geometry length must be a multiple of 3, got shape {geometry.shape}")
    return geometry.reshape(-1, 3)


def check_geometry(geometry):
    geometry = check_vector(geometry, name="geometry")
    if geometry.shape[0] % 3:
        raise ValueError(f"geometry length {geometry.shape[0]} is not a multiple of 3")
    return geometry


@dataclass(frozen=True)
class DesignVariable:
    """One design variable: a displacement of ``nodes`` along ``axis`` (0=x, 1=y, 2=z).

    Listing several nodes couples them, e.g. a mirrored pair of control points
    moved together by a single variable.
    """

    nodes: tuple
    axis: int
    lower: float
    upper: float
    name: str = ""

    def __post_init__(self):
        nodes = tuple(tuple(int(c) for c in node) for node in self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if self.axis not in (0, 1, 2):
            raise InvalidLatticeError(f"axis must be 0, 1 or 2, got {self.axis}")
        if not self.lower < self.upper:
            raise InvalidLatticeError(f"variable {self.name!r}: lower {self.lower} >= upper {self.upper}")
        if not nodes:
            raise InvalidLatticeError(f"variable {self.name!r} moves no control point")


@dataclass
class FfdLattice:
    origin: np.ndarray
    axes: np.ndarray
    degrees: tuple
    variables: list = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.axes = np.asarray(self.axes, dtype=np.float64).reshape(3, 3)
        self.degrees = tuple(int(t) for t in self.degrees)
        if len(self.degrees) != 3 or min(self.degrees) < 1:
            raise InvalidLatticeError(f"degrees must be three integers >= 1, got {self.degrees}")
        volume = self.triple_product
        scale = np.prod(np.linalg.norm(self.axes, axis=1))
        if scale == 0 or abs(volume) <= 1e-12 * scale:
            raise InvalidLatticeError(f"lattice {self.name!r} axes are linearly dependent")
        seen = set()
        for var in self.variables:
            for node in var.nodes:
                if any(not 0 <= c <= t for c, t in zip(node, self.degrees)):
                    raise InvalidLatticeError(f"variable {var.name!r} references node {node} outside the lattice")
                key = (node, var.axis)
                if key in seen:
                    raise InvalidLatticeError(f"node {node} axis {var.axis} is driven by more than one variable")
                seen.add(key)

    @property
    def triple_product(self):
        t1, t2, t3 = self.axes
        return float(np.dot(np.cross(t1, t2), t3))

    @property
    def shape(self):
        return tuple(t + 1 for t in self.degrees)

    @property
    def n_nodes(self):
        return int(np.prod(self.shape))

    @property
    def n_vars(self):
        return len(self.variables)

    @property
    def bounds(self):
        lower = np.array([v.lower for v in self.variables], dtype=np.float64)
        upper = np.array([v.upper for v in self.variables], dtype=np.float64)
        return lower, upper

    def node_index(self, i, j, k):
        n1, n2, n3 = self.shape
        return (i * n2 + j) * n3 + k

    def regular_nodes(self):
        """Undisplaced control points, ordered by :meth:`node_index`."""
        grids = [np.arange(n) / t for n, t in zip(self.shape, self.degrees)]
        a, b, c = np.meshgrid(*grids, indexing="ij")
        local = np.stack([a.ravel(), b.ravel(), c.ravel()], axis=1)
        return self.origin + local @ self.axes


def local_coords(points, lattice):
    """Solve ``r = r0 + a*T1 + b*T2 + c*T3`` for ``(a, b, c)``.

    Accepts one point or an ``(n, 3)`` array; returns the same leading shape.
    Uses the cross-product formulas, which are exact for any non-degenerate
    parallelepiped.
    """
    points = np.asarray(points, dtype=np.float64)
    single = points.ndim == 1
    rel = np.atleast_2d(points) - lattice.origin
    t1, t2, t3 = lattice.axes
    n23, n13, n12 = np.cross(t2, t3), np.cross(t1, t3), np.cross(t1, t2)
    denom = np.array([n23 @ t1, n13 @ t2, n12 @ t3])
    if np.any(denom == 0):
        raise InvalidLatticeError("degenerate lattice: zero triple product")
    coords = np.stack([rel @ n23, rel @ n13, rel @ n12], axis=1) / denom
    return coords[0] if single else coords


def bernstein(v, r, chi):
    """Bernstein basis polynomial ``C(r, v) chi^v (1 - chi)^(r - v)``."""
    if not 0 <= v <= r:
        raise ValueError(f"Bernstein index v={v} outside 0..{r}")
    chi = np.asarray(chi, dtype=np.float64)
    out = comb(r, v) * chi**v * (1.0 - chi) ** (r - v)
    return float(out) if out.ndim == 0 else out


def _basis_matrix(chi, r):
    return np.stack([bernstein(v, r, chi) for v in range(r + 1)], axis=-1)


def bernstein_weights(local, degrees):
    """Tensor-product weights, shape ``(n_points, n_nodes)`` in node_index order."""
    local = np.atleast_2d(local)
    ba = _basis_matrix(local[:, 0], degrees[0])
    bb = _basis_matrix(local[:, 1], degrees[1])
    bc = _basis_matrix(local[:, 2], degrees[2])
    w = ba[:, :, None, None] * bb[:, None, :, None] * bc[:, None, None, :]
    return w.reshape(local.shape[0], -1)


def displace_control_points(lattice, v):
    """Control-point positions after applying the lattice's design variables."""
    v = check_vector(v, lattice.n_vars, name="design vector")
    nodes = lattice.regular_nodes()
    for value, var in zip(v, lattice.variables):
        for node in var.nodes:
            nodes[lattice.node_index(*node), var.axis] += value
    return nodes


def _split(v, lattices):
    sizes = [lat.n_vars for lat in lattices]
    v = check_vector(v, sum(sizes), name="design vector")
    return np.split(v, np.cumsum(sizes)[:-1])


def assign_points(points, lattices, outside="pass"):
    """Owner index (first lattice containing the point, -1 if none) and local coords.

    ``outside='error'`` raises when a point lies in no lattice.
    """
    n = points.shape[0]
    owner = np.full(n, -1, dtype=int)
    local = np.zeros((n, 3))
    for idx, lat in enumerate(lattices):
        free = owner < 0
        if not free.any():
            break
        lc = local_coords(points[free], lat)
        inside = np.all((lc >= -FACE_TOLERANCE) & (lc <= 1 + FACE_TOLERANCE), axis=1)
        rows = np.flatnonzero(free)[inside]
        owner[rows] = idx
        local[rows] = np.clip(lc[inside], 0.0, 1.0)
    if outside == "error" and np.any(owner < 0):
        bad = np.flatnonzero(owner < 0)
        raise OutOfLatticeError(f"{bad.size} points lie outside every lattice (first: {bad[0]})")
    if outside not in ("pass", "error"):
        raise ValueError(f"outside must be 'pass' or 'error', got {outside!r}")
    return owner, local


def deform(baseline, lattices, v, outside="pass"):
    """Deformed geometry ``g0 + sum_ijk B_ijk * (c_ijk(v) - c_ijk(0))``."""
    baseline = check_geometry(baseline)
    points = as_points(baseline)
    owner, local = assign_points(points, lattices, outside)
    moved = points.copy()
    for idx, (lat, v_lat) in enumerate(zip(lattices, _split(v, lattices))):
        rows = np.flatnonzero(owner == idx)
        if rows.size == 0:
            continue
        delta = displace_control_points(lat, v_lat) - lat.regular_nodes()
        moved[rows] += bernstein_weights(local[rows], lat.degrees) @ delta
    return moved.ravel()


def deformation_matrix(baseline, lattices, outside="pass"):
    """``D x M`` matrix ``A`` with ``deform(g0, lattices, v) == g0 + A @ v``."""
    baseline = check_geometry(baseline)
    points = as_points(baseline)
    owner, local = assign_points(points, lattices, outside)
    n_total = sum(lat.n_vars for lat in lattices)
    A = np.zeros((baseline.size, n_total))
    offset = 0
    for idx, lat in enumerate(lattices):
        rows = np.flatnonzero(owner == idx)
        if rows.size:
            weights = bernstein_weights(local[rows], lat.degrees)
            for m, var in enumerate(lat.variables):
                cols = [lat.node_index(*node) for node in var.nodes]
                A[3 * rows + var.axis, offset + m] = weights[:, cols].sum(axis=1)
        offset += lat.n_vars
    return A


def design_bounds(lattices):
    lower = np.concatenate([lat.bounds[0] for lat in lattices])
    upper = np.concatenate([lat.bounds[1] for lat in lattices])
    return lower, upper


@dataclass
class Dataset:
    """Sampled geometries (rows of ``X``) with their design vectors kept for audit."""

    X: np.ndarray
    V: np.ndarray
    seed: int
    lower: np.ndarray
    upper: np.ndarray
    n_attempts: int
    metadata: dict = field(default_factory=dict)

    @property
    def n_rejected(self):
        return self.n_attempts - self.X.shape[0]

    @property
    def acceptance_ratio(self):
        return self.X.shape[0] / self.n_attempts


def row_generator(seed, row):
    """Independent random stream for one dataset row."""
    return np.random.default_rng([int(seed), int(row)])


def sample_dataset(baseline, lattices, n_samples, seed, feasibility=None,
                   window=1000, min_acceptance=0.01):
    """Draw ``v ~ U(lb, ub)`` per row, deform, and keep rows passing ``feasibility``.

    Rejected rows are redrawn from the same row stream, so the output depends
    only on ``seed``.  If fewer than ``min_acceptance`` of the last ``window``
    draws were accepted the space is declared infeasible.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    baseline = check_geometry(baseline)
    lower, upper = check_bounds(*design_bounds(lattices))
    A = deformation_matrix(baseline, lattices)
    X = np.empty((n_samples, baseline.size))
    V = np.empty((n_samples, lower.size))
    recent = deque(maxlen=window)
    attempts = 0
    for row in range(n_samples):
        rng = row_generator(seed, row)
        while True:
            v = lower + (upper - lower) * rng.random(lower.size)
            x = baseline + A @ v
            attempts += 1
            ok = feasibility is None or bool(feasibility(x))
            recent.append(ok)
            if ok:
                break
            if len(recent) == window and sum(recent) < min_acceptance * window:
                raise InfeasibleSpaceError(
                    f"acceptance below {min_acceptance:.0%} over the last {window} draws "
                    f"({attempts} draws, {row} rows accepted)")
        X[row] = x
        V[row] = v
    return Dataset(X=X, V=V, seed=int(seed), lower=lower, upper=upper, n_attempts=attempts)


class FreeFormDeformation(TransformerMixin, BaseEstimator):
    """Map design vectors to geometries through one or more FFD lattices.

    Nothing is learned from data: ``fit`` caches the deformation matrix for
    ``baseline`` so that ``transform`` is a single matrix product per batch.
    """

    def __init__(self, baseline=None, lattices=None, outside="pass"):
        self.baseline = baseline
        self.lattices = lattices
        self.outside = outside

    def fit(self, X=None, y=None):
        self.baseline_ = check_geometry(self.baseline)
        self.matrix_ = deformation_matrix(self.baseline_, self.lattices, self.outside)
        self.lower_, self.upper_ = design_bounds(self.lattices)
        self.n_features_in_ = self.matrix_.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "matrix_")
        V = check_rows(X, self.n_features_in_, name="design vectors")
        return self.baseline_ + V @ self.matrix_.T

    def in_bounds(self, X):
        check_is_fitted(self, "matrix_")
        V = check_rows(X, self.n_features_in_, name="design vectors")
        return np.all((V >= self.lower_) & (V <= self.upper_), axis=1)


def enclosing_lattice(geometry, degrees, axis, bound, margin=0.5, name="enclosing"):
    """Box lattice around ``geometry`` with one variable per control-point column.

    The box is the bounding box of the points grown by ``margin`` times its
    extent on every side.  Each variable moves the full column of nodes that
    share ``(i, k)`` along ``axis``, giving ``(t1 + 1) * (t3 + 1)`` variables
    bounded by ``[-bound, bound]``.
    """
    points = as_points(check_geometry(geometry))
    lo, hi = points.min(axis=0), points.max(axis=0)
    extent = np.maximum(hi - lo, 1e-12)
    origin = lo - margin * extent
    axes = np.diag(extent * (1.0 + 2.0 * margin))
    t1, t2, t3 = degrees
    variables = []
    for i in range(t1 + 1):
        for k in range(t3 + 1):
            nodes = tuple((i, j, k) for j in range(t2 + 1))
            variables.append(DesignVariable(nodes=nodes, axis=axis, lower=-bound, upper=bound,
                                            name=f"c{i}_{k}"))
    return FfdLattice(origin=origin, axes=axes, degrees=degrees, variables=variables, name=name)
