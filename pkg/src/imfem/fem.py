"""P1 finite element primitives: quadrature, interpolation, norms, persistence.

An FeFunction is a nodal coefficient vector bound to a mesh; its gradient
is piecewise constant.  All operations here are pure and the objects are
treated as immutable after construction.
"""

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, build_uniform_mesh, locate_points

__all__ = [
    "TriangleQuadrature",
    "FeFunction",
    "triangle_rule",
    "interpolate_nodal",
    "mean_value",
    "evaluate_cross_mesh",
    "evaluate_many",
    "l1_ratio_deviation",
    "h1_seminorm_region",
    "l2_norm",
    "h1_norm",
    "save_field",
    "load_field",
    "FIELD_HEADER",
]

FIELD_HEADER = "p1-field"


@dataclass(frozen=True)
class TriangleQuadrature:
    """Quadrature rule on the reference triangle, weights summing to 1/2."""

    degree: int
    points: np.ndarray   # (nq, 3) barycentric coordinates
    weights: np.ndarray  # (nq,)


def triangle_rule(degree):
    """Symmetric Gauss rules on the reference triangle (degrees 1, 2, 5)."""
    if degree == 1:
        pts = np.array([[1 / 3, 1 / 3, 1 / 3]])
        wts = np.array([0.5])
    elif degree == 2:
        # interior three-point rule (the edge-midpoint variant is equally
        # exact but its points are ambiguous for cross-mesh lookups)
        pts = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        wts = np.full(3, 1 / 6)
    elif degree == 5:
        s = np.sqrt(15.0)
        a1 = (6.0 + s) / 21.0
        a2 = (6.0 - s) / 21.0
        w1 = (155.0 + s) / 2400.0
        w2 = (155.0 - s) / 2400.0
        pts = [[1 / 3, 1 / 3, 1 / 3]]
        wts = [9.0 / 80.0]
        for a, w in ((a1, w1), (a2, w2)):
            c = 1.0 - 2.0 * a
            pts += [[c, a, a], [a, c, a], [a, a, c]]
            wts += [w, w, w]
        pts = np.asarray(pts)
        wts = np.asarray(wts)
    else:
        raise ValueError(f"unsupported triangle quadrature degree {degree}")
    return TriangleQuadrature(degree=degree, points=pts, weights=wts)


@dataclass(frozen=True)
class FeFunction:
    """P1 function: one coefficient per mesh node."""

    mesh: Mesh
    coeffs: np.ndarray

    def __post_init__(self):
        if len(self.coeffs) != self.mesh.num_nodes:
            raise ValueError(
                f"coefficient count {len(self.coeffs)} does not match "
                f"node count {self.mesh.num_nodes}"
            )

    def triangle_gradients(self):
        """Constant gradient per triangle, shape (num_triangles, 2)."""
        vals = self.coeffs[self.mesh.triangles]          # (nt, 3)
        return np.einsum("tv,tvd->td", vals, self.mesh.tri_grads)


def _call_on_points(f, pts):
    """Evaluate f on an (m, 2) array, accepting scalar or vectorized f."""
    try:
        out = np.asarray(f(pts), dtype=float)
        if out.shape == (len(pts),):
            return out
    except Exception:
        pass
    return np.array([float(f(p)) for p in pts])


def interpolate_nodal(mesh, f):
    """Nodal interpolant: coefficients are f evaluated at the mesh nodes."""
    vals = _call_on_points(f, mesh.nodes)
    if not np.isfinite(vals).all():
        bad = mesh.nodes[~np.isfinite(vals)][0]
        raise ValueError(f"non-finite value at node {tuple(bad)}")
    return FeFunction(mesh=mesh, coeffs=vals)


def mean_value(u):
    """Exact integral of the P1 function over the unit square (|domain| = 1)."""
    vals = u.coeffs[u.mesh.triangles]
    return float(np.sum(u.mesh.tri_areas * vals.mean(axis=1)))


def evaluate_many(u, pts):
    """Values and gradients of u at an (m, 2) array of points."""
    tri, bary = locate_points(u.mesh, pts)
    node_vals = u.coeffs[u.mesh.triangles[tri]]          # (m, 3)
    vals = np.einsum("mv,mv->m", node_vals, bary)
    grads = np.einsum("mv,mvd->md", node_vals, u.mesh.tri_grads[tri])
    return vals, grads


def evaluate_cross_mesh(u, x):
    """Value and gradient of u at a single point (possibly off-mesh nodes)."""
    vals, grads = evaluate_many(u, np.asarray(x, dtype=float).reshape(1, 2))
    return float(vals[0]), grads[0]


def l1_ratio_deviation(s_new, s_old):
    """L1 norm of 1 - s_new/s_old, with the ratio formed nodally.

    The nodal ratio is re-interpreted as a P1 function and its absolute
    value integrated with the degree-2 (edge midpoint) rule.
    """
    if s_new.mesh is not s_old.mesh and s_new.mesh.n != s_old.mesh.n:
        raise ValueError("deviation requires both functions on the same mesh")
    if (s_old.coeffs == 0.0).any():
        raise ZeroDivisionError("zero nodal value in the previous iterate")
    dev = 1.0 - s_new.coeffs / s_old.coeffs
    rule = triangle_rule(2)
    tri_vals = dev[s_new.mesh.triangles]                  # (nt, 3)
    qvals = tri_vals @ rule.points.T                      # (nt, nq)
    return float(
        np.sum(2.0 * s_new.mesh.tri_areas[:, None] * rule.weights[None, :]
               * np.abs(qvals))
    )


def _region_mask(mesh, region):
    if region is None:
        return np.ones(mesh.num_triangles, dtype=bool)
    centers = mesh.barycenters()
    try:
        mask = np.asarray(region(centers), dtype=bool)
        if mask.shape == (mesh.num_triangles,):
            return mask
    except Exception:
        pass
    return np.array([bool(region(c)) for c in centers])


def h1_seminorm_region(u, region=None):
    """H1 seminorm restricted to triangles whose barycenter satisfies region."""
    mask = _region_mask(u.mesh, region)
    grads = u.triangle_gradients()
    return float(
        np.sqrt(np.sum(u.mesh.tri_areas[mask] * (grads[mask] ** 2).sum(axis=1)))
    )


def l2_norm(u):
    """Exact L2 norm of the P1 function."""
    v = u.coeffs[u.mesh.triangles]
    s = (v ** 2).sum(axis=1) + v[:, 0] * v[:, 1] + v[:, 0] * v[:, 2] + v[:, 1] * v[:, 2]
    return float(np.sqrt(np.sum(u.mesh.tri_areas / 6.0 * s)))


def h1_norm(u):
    return float(np.hypot(l2_norm(u), h1_seminorm_region(u)))


def save_field(u, path):
    """Persist nodal values in the plain text field format."""
    with open(path, "w") as fh:
        fh.write(f"{FIELD_HEADER} n={u.mesh.n}\n")
        for v in u.coeffs:
            fh.write(f"{float(v)!r}\n")


def load_field(path, mesh=None):
    """Load a field written by save_field; rebuilds the mesh if not given."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != FIELD_HEADER or not header[1].startswith("n="):
            raise ValueError(f"{path}: not a p1-field file")
        n = int(header[1][2:])
        coeffs = np.array([float(line) for line in fh if line.strip()])
    if mesh is None:
        mesh = build_uniform_mesh(n)
    elif mesh.n != n:
        raise ValueError(f"{path}: field has n={n}, mesh has n={mesh.n}")
    return FeFunction(mesh=mesh, coeffs=coeffs)
