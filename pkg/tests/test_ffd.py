import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latent_sbdo.ffd import (DesignVariable, FfdLattice, FreeFormDeformation, InfeasibleSpaceError,
                             InvalidLatticeError, OutOfLatticeError, bernstein, bernstein_weights, deform,
                             deformation_matrix, displace_control_points, local_coords, sample_dataset)


def skewed_lattice(variables=()):
    return FfdLattice(origin=[0.1, -0.2, 0.3],
                      axes=[[1.0, 0.1, 0.0], [0.2, 0.8, 0.1], [0.0, -0.1, 0.5]],
                      degrees=(2, 1, 1), variables=list(variables))


def test_local_coords_origin_and_axis_end():
    lat = skewed_lattice()
    assert np.allclose(local_coords(lat.origin, lat), 0.0, atol=1e-15)
    assert np.allclose(local_coords(lat.origin + lat.axes[0], lat), [1, 0, 0], atol=1e-14)


def test_local_coords_round_trip(rng):
    lat = skewed_lattice()
    abc = rng.random((200, 3))
    points = lat.origin + abc @ lat.axes
    got = local_coords(points, lat)
    # independent oracle: solve the 3x3 system directly
    ref = np.linalg.solve(lat.axes.T, (points - lat.origin).T).T
    assert np.abs(got - ref).max() < 1e-12
    assert np.abs(lat.origin + got @ lat.axes - points).max() < 1e-12


def test_degenerate_lattice_rejected():
    with pytest.raises(InvalidLatticeError):
        FfdLattice(origin=[0, 0, 0], axes=[[1, 0, 0], [2, 0, 0], [0, 0, 1]], degrees=(1, 1, 1))


def test_duplicate_driver_rejected():
    a = DesignVariable(nodes=((0, 0, 0),), axis=1, lower=-1, upper=1)
    with pytest.raises(InvalidLatticeError):
        skewed_lattice([a, a])


def test_bernstein_values():
    assert bernstein(0, 2, 0.0) == 1.0
    assert bernstein(1, 2, 0.5) == 0.5
    assert abs(sum(bernstein(v, 5, 0.37) for v in range(6)) - 1.0) < 1e-14
    with pytest.raises(ValueError):
        bernstein(3, 2, 0.5)


@given(st.integers(1, 10), st.floats(0.0, 1.0))
def test_bernstein_partition_of_unity(r, chi):
    assert abs(sum(bernstein(v, r, chi) for v in range(r + 1)) - 1.0) < 1e-13


def test_displace_control_points():
    var = DesignVariable(nodes=((0, 0, 0),), axis=1, lower=-1, upper=1)
    lat = skewed_lattice([var])
    base = lat.regular_nodes()
    assert np.array_equal(displace_control_points(lat, [0.0]), base)
    moved = displace_control_points(lat, [0.25]) - base
    assert np.array_equal(moved[0], [0, 0.25, 0])
    assert not moved[1:].any()
    assert np.allclose(displace_control_points(lat, [0.5]) - base, 2 * moved)


def test_single_control_point_at_centre():
    var = DesignVariable(nodes=((1, 1, 1),), axis=2, lower=-1, upper=1)
    lat = FfdLattice(origin=[0, 0, 0], axes=np.eye(3), degrees=(1, 1, 1), variables=[var])
    out = deform(np.array([0.5, 0.5, 0.5]), [lat], [0.8])
    assert np.allclose(out, [0.5, 0.5, 0.5 + 0.125 * 0.8], atol=1e-15)


def test_deform_zero_is_identity(baseline, lattices, deformation):
    assert np.abs(deform(baseline, lattices, np.zeros(21)) - baseline).max() < 1e-14


def test_matrix_path_matches_direct(baseline, lattices, deformation, rng):
    A = deformation.matrix_
    for m in (0, 7, 20):
        e = np.zeros(21)
        e[m] = 1.0
        assert np.abs(A[:, m] - (deform(baseline, lattices, e) - baseline)).max() < 1e-12
    lo, hi = deformation.lower_, deformation.upper_
    for _ in range(10):
        v = lo + (hi - lo) * rng.random(21)
        assert np.abs(deformation.transform(v[None])[0] - deform(baseline, lattices, v)).max() < 1e-10


def test_points_outside_all_lattices():
    lat = FfdLattice(origin=[0, 0, 0], axes=np.eye(3), degrees=(1, 1, 1),
                     variables=[DesignVariable(nodes=((1, 1, 1),), axis=0, lower=-1, upper=1)])
    g = np.array([0.5, 0.5, 0.5, 3.0, 3.0, 3.0])
    out = deform(g, [lat], [0.1])
    assert np.array_equal(out[3:], g[3:])
    with pytest.raises(OutOfLatticeError):
        deform(g, [lat], [0.1], outside="error")


def test_first_lattice_owns_shared_points():
    a = FfdLattice(origin=[0, 0, 0], axes=np.eye(3), degrees=(1, 1, 1),
                   variables=[DesignVariable(nodes=((1, 0, 0),), axis=1, lower=-1, upper=1)])
    b = FfdLattice(origin=[1, 0, 0], axes=np.eye(3), degrees=(1, 1, 1),
                   variables=[DesignVariable(nodes=((0, 0, 0),), axis=1, lower=-1, upper=1)])
    face_point = np.array([1.0, 0.0, 0.0])
    assert np.allclose(deform(face_point, [a, b], [0.5, 0.0]), [1.0, 0.5, 0.0])
    assert np.allclose(deform(face_point, [a, b], [0.0, 0.5]), face_point)


def test_sample_dataset_is_deterministic(baseline, lattices):
    d1 = sample_dataset(baseline, lattices, 5, seed=9)
    d2 = sample_dataset(baseline, lattices, 5, seed=9)
    assert np.array_equal(d1.X, d2.X)
    assert np.array_equal(d1.V, d2.V)


def test_sample_mean_of_design_vectors(baseline, lattices):
    n = 10000
    ds = sample_dataset(baseline, lattices, n, seed=1)
    lo, hi = ds.lower, ds.upper
    tol = 3 * (hi - lo) / np.sqrt(12 * n)
    assert np.all(np.abs(ds.V.mean(axis=0) - 0.5 * (lo + hi)) < tol)
    assert np.all((ds.V >= lo) & (ds.V <= hi))


def test_rejecting_everything_is_infeasible(baseline, lattices):
    with pytest.raises(InfeasibleSpaceError):
        sample_dataset(baseline, lattices, 3, seed=0, feasibility=lambda x: False, window=50)


def test_half_acceptance_ratio(baseline, lattices):
    flag = {"n": 0}

    def every_other(x):
        flag["n"] += 1
        return flag["n"] % 2 == 0

    ds = sample_dataset(baseline, lattices, 200, seed=0, feasibility=every_other)
    assert abs(ds.acceptance_ratio - 0.5) < 0.1


def test_estimator_api(baseline, lattices):
    ffd = FreeFormDeformation(baseline, lattices)
    assert ffd.get_params()["outside"] == "pass"
    out = ffd.fit_transform(np.zeros((2, 21)))
    assert np.array_equal(out, np.tile(baseline, (2, 1)))
    assert ffd.in_bounds(np.zeros((1, 21))).all()


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 2**31))
def test_affinity_property(a, b, seed):
    lat = skewed_lattice([DesignVariable(nodes=((1, 0, 1),), axis=0, lower=-1, upper=1),
                          DesignVariable(nodes=((2, 1, 0), (2, 1, 1)), axis=2, lower=-1, upper=1)])
    rng = np.random.default_rng(seed)
    g = (lat.origin + rng.random((30, 3)) @ lat.axes).ravel()
    v1, v2 = rng.normal(size=2), rng.normal(size=2)
    lhs = deform(g, [lat], a * v1 + b * v2) - g
    rhs = a * (deform(g, [lat], v1) - g) + b * (deform(g, [lat], v2) - g)
    assert np.abs(lhs - rhs).max() < 1e-10
    A = deformation_matrix(g, [lat])
    assert np.abs(g + A @ v1 - deform(g, [lat], v1)).max() < 1e-12
