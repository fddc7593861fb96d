"""Uniform triangular meshes of the unit square.

Every mesh splits each grid cell along the lower-left to upper-right
diagonal, so meshes with subdivision counts n and k*n are exactly nested.
Structured indexing makes point location a constant-time arithmetic
operation instead of a search.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "PointOutsideDomainError",
    "build_uniform_mesh",
    "locate_point",
    "locate_points",
    "boundary_quadrature",
]

_LOCATE_TOL = 1e-12


class PointOutsideDomainError(ValueError):
    """Raised when a query point lies outside the closed unit square."""


@dataclass(frozen=True)
class Mesh:
    """Triangulation of (0,1)^2 with n subdivisions per side.

    Nodes are ordered lexicographically with x varying fastest, so node
    (i, j) has index j*(n+1)+i and coordinates (i/n, j/n).  Each cell
    contributes two counterclockwise triangles, the lower one
    (ll, lr, ur) first.
    """

    n: int
    nodes: np.ndarray            # ((n+1)^2, 2)
    triangles: np.ndarray        # (2 n^2, 3), CCW node indices
    boundary_edges: np.ndarray   # (4n, 2) node pairs
    boundary_normals: np.ndarray  # (4n, 2) outward unit normals
    boundary_lengths: np.ndarray  # (4n,)
    interior_node_flags: np.ndarray  # ((n+1)^2,) bool
    tri_areas: np.ndarray = field(repr=False, default=None)   # (2 n^2,)
    tri_grads: np.ndarray = field(repr=False, default=None)   # (2 n^2, 3, 2)

    @property
    def num_nodes(self):
        return self.nodes.shape[0]

    @property
    def num_triangles(self):
        return self.triangles.shape[0]

    @property
    def h(self):
        return 1.0 / self.n

    def barycenters(self):
        return self.nodes[self.triangles].mean(axis=1)

    def interior_indices(self):
        return np.flatnonzero(self.interior_node_flags)


def build_uniform_mesh(n):
    """Build the uniform mesh with n >= 1 subdivisions per side."""
    if n < 1:
        raise ValueError(f"subdivision count must be >= 1, got {n}")
    n = int(n)
    coords = np.arange(n + 1) / n
    xx, yy = np.meshgrid(coords, coords, indexing="xy")
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ll = (jj * (n + 1) + ii).ravel()
    lr = ll + 1
    ul = ll + (n + 1)
    ur = ul + 1
    lower = np.column_stack([ll, lr, ur])
    upper = np.column_stack([ll, ur, ul])
    # interleave so cell (i,j) owns triangles 2*(j*n+i) and 2*(j*n+i)+1
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    edges, normals = [], []
    for k in range(n):          # bottom, y = 0
        edges.append((k, k + 1))
        normals.append((0.0, -1.0))
    for k in range(n):          # right, x = 1
        edges.append((k * (n + 1) + n, (k + 1) * (n + 1) + n))
        normals.append((1.0, 0.0))
    for k in range(n):          # top, y = 1
        edges.append((n * (n + 1) + k, n * (n + 1) + k + 1))
        normals.append((0.0, 1.0))
    for k in range(n):          # left, x = 0
        edges.append((k * (n + 1), (k + 1) * (n + 1)))
        normals.append((-1.0, 0.0))
    boundary_edges = np.asarray(edges, dtype=np.int64)
    boundary_normals = np.asarray(normals)
    boundary_lengths = np.full(4 * n, 1.0 / n)

    on_boundary = (
        (nodes[:, 0] == 0.0) | (nodes[:, 0] == 1.0)
        | (nodes[:, 1] == 0.0) | (nodes[:, 1] == 1.0)
    )

    areas, grads = _triangle_geometry(nodes, triangles)
    return Mesh(
        n=n,
        nodes=nodes,
        triangles=triangles,
        boundary_edges=boundary_edges,
        boundary_normals=boundary_normals,
        boundary_lengths=boundary_lengths,
        interior_node_flags=~on_boundary,
        tri_areas=areas,
        tri_grads=grads,
    )


def _triangle_geometry(nodes, triangles):
    """Signed areas and constant P1 basis gradients, per triangle."""
    p = nodes[triangles]                      # (nt, 3, 2)
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    inv2a = 1.0 / (2.0 * areas)
    grads = np.empty_like(p)
    grads[:, 0, 0] = (p[:, 1, 1] - p[:, 2, 1]) * inv2a
    grads[:, 0, 1] = (p[:, 2, 0] - p[:, 1, 0]) * inv2a
    grads[:, 1, 0] = (p[:, 2, 1] - p[:, 0, 1]) * inv2a
    grads[:, 1, 1] = (p[:, 0, 0] - p[:, 2, 0]) * inv2a
    grads[:, 2, 0] = (p[:, 0, 1] - p[:, 1, 1]) * inv2a
    grads[:, 2, 1] = (p[:, 1, 0] - p[:, 0, 0]) * inv2a
    return areas, grads


def locate_points(mesh, pts):
    """Vectorized point location.

    Returns (triangle indices, barycentric coordinates) for an array of
    points of shape (m, 2).  Points on a cell diagonal resolve to the
    lower-indexed (lower) triangle of the cell.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("expected points of shape (m, 2)")
    if (pts < -_LOCATE_TOL).any() or (pts > 1.0 + _LOCATE_TOL).any():
        bad = pts[((pts < -_LOCATE_TOL) | (pts > 1.0 + _LOCATE_TOL)).any(axis=1)][0]
        raise PointOutsideDomainError(f"point {tuple(bad)} outside the unit square")
    pts = np.clip(pts, 0.0, 1.0)

    n = mesh.n
    ix = np.minimum((pts[:, 0] * n).astype(np.int64), n - 1)
    iy = np.minimum((pts[:, 1] * n).astype(np.int64), n - 1)
    xi = pts[:, 0] * n - ix
    eta = pts[:, 1] * n - iy
    in_lower = eta <= xi

    tri = 2 * (iy * n + ix) + (~in_lower)
    bary = np.empty((len(pts), 3))
    # lower (ll, lr, ur): (1-xi, xi-eta, eta); upper (ll, ur, ul): (1-eta, xi, eta-xi)
    bary[in_lower, 0] = 1.0 - xi[in_lower]
    bary[in_lower, 1] = xi[in_lower] - eta[in_lower]
    bary[in_lower, 2] = eta[in_lower]
    up = ~in_lower
    bary[up, 0] = 1.0 - eta[up]
    bary[up, 1] = xi[up]
    bary[up, 2] = eta[up] - xi[up]
    return tri, bary


def locate_point(mesh, x):
    """Locate a single point; see locate_points."""
    tri, bary = locate_points(mesh, np.asarray(x, dtype=float).reshape(1, 2))
    return int(tri[0]), bary[0]


def boundary_quadrature(mesh, degree):
    """Gauss points on every boundary edge.

    Returns (points, weights, normals) arrays; the weights sum to the
    perimeter of the square.  Supported degrees: 1, 3, 5.
    """
    npts = {1: 1, 3: 2, 5: 3}.get(degree)
    if npts is None:
        raise ValueError(f"unsupported boundary quadrature degree {degree}")
    gx, gw = np.polynomial.legendre.leggauss(npts)

    a = mesh.nodes[mesh.boundary_edges[:, 0]]
    b = mesh.nodes[mesh.boundary_edges[:, 1]]
    # map [-1, 1] to each edge
    t = 0.5 * (gx + 1.0)
    points = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    weights = 0.5 * mesh.boundary_lengths[:, None] * gw[None, :]
    normals = np.broadcast_to(mesh.boundary_normals[:, None, :], points.shape)
    return (
        points.reshape(-1, 2),
        weights.reshape(-1),
        normals.reshape(-1, 2).copy(),
    )
