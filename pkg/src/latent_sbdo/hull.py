"""Procedural hull-like half body and the hydrostatic measurements used as constraints.

The body is a structured ``n_stations x n_girth`` grid.  Station ``i`` sits at
``x = length * i / (n_stations - 1)`` (stern at 0, bow at ``length``); girth
point ``j`` runs from the waterline (``j = 0``) down to the keel on the
centreplane (``j = n_girth - 1``).  Waterlines are parabolic and sections are
super-ellipses, so the shape is smooth and has no flat parts.  Only the
starboard half (``y >= 0``) is stored; volumes and areas are doubled.
"""

from dataclasses import dataclass, field

import numpy as np

from .ffd import DesignVariable, FfdLattice, as_points


@dataclass(frozen=True)
class DomeSpec:
    """Cylinder along x that the hull must keep enclosing (sonar-dome volume)."""

    center_x: float = 0.80
    center_z: float = -0.020
    radius: float = 0.010
    length: float = 0.015
    n_slices: int = 5
    n_radial: int = 4
    n_angular: int = 12


@dataclass(frozen=True)
class HullSpec:
    length: float = 1.0
    beam: float = 0.133
    draft: float = 0.0434
    waterline_z: float = 0.0
    n_stations: int = 41
    n_girth: int = 25
    section_exponent: float = 2.5
    end_fraction: float = 0.05
    dome: DomeSpec = field(default_factory=DomeSpec)

    @property
    def n_points(self):
        return self.n_stations * self.n_girth


def half_breadth(spec, xi):
    """Waterline half-breadth at normalized station ``xi`` in [0, 1]."""
    body = 1.0 - (2.0 * xi - 1.0) ** 2
    return 0.5 * spec.beam * (spec.end_fraction + (1.0 - spec.end_fraction) * body)


def section_depth(spec, xi):
    body = 1.0 - (2.0 * xi - 1.0) ** 4
    return spec.draft * (spec.end_fraction + (1.0 - spec.end_fraction) * body)


def make_hull(spec=None):
    """Baseline geometry as a flat vector of length ``3 * n_stations * n_girth``."""
    spec = spec or HullSpec()
    xi = np.linspace(0.0, 1.0, spec.n_stations)
    theta = np.linspace(0.0, 0.5 * np.pi, spec.n_girth)
    e = 2.0 / spec.section_exponent
    b = half_breadth(spec, xi)[:, None]
    t = section_depth(spec, xi)[:, None]
    cos_t, sin_t = np.cos(theta)[None, :], np.sin(theta)[None, :]
    # clip tiny negative cosines at theta = pi/2 before the fractional power
    y = b * np.clip(cos_t, 0.0, None) ** e
    z = spec.waterline_z - t * np.clip(sin_t, 0.0, None) ** e
    x = np.broadcast_to(spec.length * xi[:, None], y.shape)
    return np.stack([x, y, z], axis=-1).reshape(-1)


def grid_points(geometry, spec):
    return as_points(geometry).reshape(spec.n_stations, spec.n_girth, 3)


def beam(geometry):
    """Maximum lateral extent of the stored points."""
    y = as_points(geometry)[:, 1]
    return float(y.max() - y.min())


def draft(geometry, waterline_z=0.0):
    return float(waterline_z - as_points(geometry)[:, 2].min())


def length_overall(geometry):
    x = as_points(geometry)[:, 0]
    return float(x.max() - x.min())


def _quads(geometry, spec):
    g = grid_points(geometry, spec)
    return g[:-1, :-1], g[1:, :-1], g[1:, 1:], g[:-1, 1:]


def displacement_volume(geometry, spec):
    """Submerged volume of the full (mirrored) body.

    Each surface panel is projected onto the centreplane; the prism between the
    projection and the panel has volume ``signed_area_xz * mean_y``.
    """
    p0, p1, p2, p3 = _quads(geometry, spec)
    xs = np.stack([p0[..., 0], p1[..., 0], p2[..., 0], p3[..., 0]])
    zs = np.stack([p0[..., 2], p1[..., 2], p2[..., 2], p3[..., 2]])
    area = 0.5 * np.sum(xs * np.roll(zs, -1, axis=0) - np.roll(xs, -1, axis=0) * zs, axis=0)
    mean_y = 0.25 * (p0[..., 1] + p1[..., 1] + p2[..., 1] + p3[..., 1])
    return float(2.0 * abs(np.sum(area * mean_y)))


def wetted_area(geometry, spec):
    """Surface area of the full body, half the cross product of panel diagonals."""
    p0, p1, p2, p3 = _quads(geometry, spec)
    cross = np.cross(p2 - p0, p3 - p1)
    return float(2.0 * 0.5 * np.linalg.norm(cross, axis=-1).sum())


def dome_points(dome):
    """Fixed quadrature points filling the dome cylinder (equal-volume cells)."""
    xs = dome.center_x + dome.length * ((np.arange(dome.n_slices) + 0.5) / dome.n_slices - 0.5)
    r = dome.radius * np.sqrt((np.arange(dome.n_radial) + 0.5) / dome.n_radial)
    phi = 2.0 * np.pi * (np.arange(dome.n_angular) + 0.5) / dome.n_angular
    R, P = np.meshgrid(r, phi, indexing="ij")
    y = (R * np.cos(P)).ravel()
    z = (dome.center_z + R * np.sin(P)).ravel()
    return [(x, y, z) for x in xs]


def _inside_polygon(py, pz, poly_y, poly_z):
    """Even-odd ray casting, vectorized over query points."""
    y1, z1 = poly_y[None, :], poly_z[None, :]
    y2, z2 = np.roll(poly_y, -1)[None, :], np.roll(poly_z, -1)[None, :]
    py, pz = py[:, None], pz[:, None]
    crosses = (z1 > pz) != (z2 > pz)
    with np.errstate(divide="ignore", invalid="ignore"):
        y_at = y1 + (pz - z1) * (y2 - y1) / (z2 - z1)
    hits = crosses & (py < y_at)
    return np.count_nonzero(hits, axis=1) % 2 == 1


def _section_at(g, x):
    """Half-section polygon at longitudinal position ``x``, interpolated between stations."""
    xs = g[:, :, 0].mean(axis=1)
    order = np.argsort(xs)
    xs = xs[order]
    if x <= xs[0] or x >= xs[-1]:
        return None
    hi = int(np.searchsorted(xs, x))
    lo = hi - 1
    w = (x - xs[lo]) / (xs[hi] - xs[lo])
    sec = (1.0 - w) * g[order[lo]] + w * g[order[hi]]
    # close the half section along the centreplane
    poly_y = np.concatenate([sec[:, 1], [0.0, 0.0]])
    poly_z = np.concatenate([sec[:, 2], [sec[-1, 2], sec[0, 2]]])
    return poly_y, poly_z


def dome_volume(geometry, spec):
    """Volume of the dome cylinder lying inside the hull."""
    dome = spec.dome
    g = grid_points(geometry, spec)
    slices = dome_points(dome)
    inside = 0
    total = 0
    for x, y, z in slices:
        total += y.size
        sec = _section_at(g, x)
        if sec is None:
            continue
        inside += int(np.count_nonzero(_inside_polygon(np.abs(y), z, *sec)))
    cylinder = np.pi * dome.radius**2 * dome.length
    return cylinder * inside / total


def default_lattices(spec=None, hull_range=0.008, bulb_range=0.006):
    """Default hull and bow lattices at desk scale.

    The hull lattice (9 layers along x, y-moves only) carries 15 variables;
    the bow lattice carries 6 variables in all three directions.  The two
    boxes share the face at ``x = 0.86 * length`` and neither moves nodes on
    it, so the deformation is continuous across the interface.
    """
    spec = spec or HullSpec()
    L, B, T, wl = spec.length, spec.beam, spec.draft, spec.waterline_z
    split = 0.86 * L
    y_span = 0.5 * B * 1.3
    z_lo, z_hi = wl - 1.2 * T, wl + 0.2 * T
    h = hull_range
    hull_vars = [DesignVariable(nodes=((0, 1, 1),), axis=1, lower=-h, upper=h, name="v1")]
    n = 2
    for i in range(1, 8):
        for k in (0, 1):
            hull_vars.append(DesignVariable(nodes=((i, 1, k),), axis=1, lower=-h, upper=h, name=f"v{n}"))
            n += 1
    hull = FfdLattice(
        origin=[-0.01 * L, -0.05 * B, z_lo],
        axes=[[split + 0.01 * L, 0, 0], [0, y_span + 0.05 * B, 0], [0, 0, z_hi - z_lo]],
        degrees=(8, 1, 2),
        variables=hull_vars,
        name="hull",
    )
    b = bulb_range
    bulb_vars = [
        DesignVariable(nodes=((1, 1, 0), (1, 1, 1)), axis=1, lower=-b, upper=b, name="v16"),
        DesignVariable(nodes=((1, 0, 0), (1, 1, 0)), axis=2, lower=-b, upper=b, name="v17"),
        DesignVariable(nodes=((1, 0, 1), (1, 1, 1)), axis=0, lower=-0.3 * b, upper=0.3 * b, name="v18"),
        DesignVariable(nodes=((2, 0, 0), (2, 1, 0)), axis=2, lower=-b, upper=b, name="v19"),
        DesignVariable(nodes=((2, 0, 0), (2, 1, 0), (2, 0, 1), (2, 1, 1)), axis=0,
                       lower=0.0, upper=0.5 * b, name="v20"),
        DesignVariable(nodes=((2, 1, 1),), axis=1, lower=-b, upper=b, name="v21"),
    ]
    bulb = FfdLattice(
        origin=[split, -0.05 * B, z_lo],
        axes=[[1.01 * L - split, 0, 0], [0, y_span + 0.05 * B, 0], [0, 0, z_hi - z_lo]],
        degrees=(2, 1, 2),
        variables=bulb_vars,
        name="bulb",
    )
    return [hull, bulb]
