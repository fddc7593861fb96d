"""Coarse-mesh solves of the advection-diffusion problem, six ways.

Baselines: plain P1 Galerkin and its least-squares stabilized variant.
Weighted methods: the diffusion is weighted by an invariant measure and
the advection enters in skew-symmetric form through a (discretely
divergence-free) corrected field, which makes the system coercive no
matter how coarse the mesh is.  Homogeneous Dirichlet conditions
throughout.
"""

import enum
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from . import measure as ms
from .fem import FeFunction, triangle_rule
from .linalg import SparseMatrix, solve_direct
from .measure import PositivityError

__all__ = [
    "Method",
    "MethodConfig",
    "SigmaInputs",
    "gls_tau",
    "assemble_ss",
    "assemble_gls_terms",
    "assemble_plain",
    "solve_u",
]

_SMALL_PECLET = 1e-4


class Method(str, enum.Enum):
    P1 = "P1"
    P1GLS = "P1GLS"
    Sigma1Exact = "Sigma1Exact"
    Sigma1h = "Sigma1h"
    Sigma2h = "Sigma2h"
    Sigma2hGLS = "Sigma2hGLS"

    @property
    def uses_sigma1(self):
        return self in (Method.Sigma1h,)

    @property
    def uses_sigma2(self):
        return self in (Method.Sigma2h, Method.Sigma2hGLS)

    @property
    def needs_fine_mesh(self):
        return self in (Method.Sigma1h, Method.Sigma2h, Method.Sigma2hGLS)


@dataclass
class MethodConfig:
    """One method run: mesh sizes are stored as integer inverses."""

    method: Method
    H_inv: int
    h_inv: Optional[int] = None
    quad_degree: int = 5
    f: Union[float, Callable] = 1.0
    gls_field: str = "B2"      # or "B2bar": field used inside the tau formula

    def __post_init__(self):
        self.method = Method(self.method)
        if self.method.needs_fine_mesh and self.h_inv is None:
            raise ValueError(f"method {self.method.value} needs a fine mesh size")
        if self.gls_field not in ("B2", "B2bar"):
            raise ValueError(f"unknown gls_field {self.gls_field!r}")


@dataclass
class SigmaInputs:
    """Precomputed weights a method run may consume."""

    sigma1: Optional[ms.InvariantMeasureResult] = None
    sigma2_0: Optional[ms.InvariantMeasureResult] = None
    sigma2: Optional[FeFunction] = None
    kappa: Optional[float] = None


def _f_values(f, pts):
    if callable(f):
        out = np.asarray(f(pts), dtype=float)
        return out.reshape(len(pts))
    return np.full(len(pts), float(f))


def _interior_dof_map(mesh):
    interior = mesh.interior_indices()
    dof = -np.ones(mesh.num_nodes, dtype=np.int64)
    dof[interior] = np.arange(len(interior))
    return interior, dof


def _quad_data(mesh, quad_degree):
    rule = triangle_rule(quad_degree)
    qp = np.einsum("qv,tvd->tqd", rule.points, mesh.nodes[mesh.triangles])
    w2a = 2.0 * mesh.tri_areas[:, None] * rule.weights[None, :]
    return rule, qp, w2a


def _cross_quad_data(mesh_H, quad_mesh, quad_degree):
    """Quadrature stream over quad_mesh with the coarse basis located at
    every point.  Returns flat arrays: points (m, 2), weights (m,),
    containing coarse triangle (m,), its node indices (m, 3), coarse
    basis values (m, 3) and gradients (m, 3, 2)."""
    from .mesh import locate_points

    rule, qp, w2a = _quad_data(quad_mesh, quad_degree)
    nt, nq = qp.shape[0], qp.shape[1]
    flat = qp.reshape(-1, 2)
    w = w2a.reshape(-1)
    if quad_mesh is mesh_H:
        ct = np.repeat(np.arange(nt), nq)
        lam = np.tile(rule.points, (nt, 1))
    else:
        ct, lam = locate_points(mesh_H, flat)
    return flat, w, ct, mesh_H.triangles[ct], lam, mesh_H.tri_grads[ct]


def assemble_ss(mesh_H, sigma_at, flux_at, f, quad_degree=5,
                require_positive_weight=True, quad_mesh=None):
    """Weighted skew-symmetric system on the interior degrees of freedom.

    Matrix of (sigma grad u, grad v) + (B, v grad u - u grad v)/2 and load
    (sigma f, v).  sigma_at and flux_at map (m, 2) point arrays to values.
    When the weight data lives on a finer mesh, pass it as quad_mesh: the
    forms are then integrated with the quadrature of that mesh (coarse
    basis functions evaluated by point location), which resolves the
    weight's sub-cell structure and, on nested meshes, transfers the
    discrete divergence-freeness of the corrected field exactly.  By
    default refuses to assemble when sigma does not integrate positively
    over some coarse triangle (that integral is exactly what enters the
    discrete coercivity bound); the composed-weight runs relax this,
    accepting thin unresolved layers where no positive combination exists.
    """
    if quad_mesh is None:
        quad_mesh = mesh_H
    flat, w, ct, nodes, lam, gH = _cross_quad_data(mesh_H, quad_mesh, quad_degree)

    sq = np.asarray(sigma_at(flat), dtype=float).reshape(-1)
    if require_positive_weight:
        cell_weight = np.zeros(mesh_H.num_triangles)
        np.add.at(cell_weight, ct, w * sq)
        tol = -1e-12 * max(1.0, float(np.abs(cell_weight).max()))
        if (cell_weight <= tol).any():
            raise PositivityError(
                "weight integrates non-positively on "
                f"{int((cell_weight <= tol).sum())} coarse triangles "
                f"(min {cell_weight.min():.3e})"
            )
    Bq = np.asarray(flux_at(flat), dtype=float).reshape(-1, 2)
    fq = _f_values(f, flat)
    Bg = np.einsum("md,mvd->mv", Bq, gH)          # B . grad(basis)

    interior, dof = _interior_dof_map(mesh_H)
    A = SparseMatrix(len(interior))
    rhs = np.zeros(mesh_H.num_nodes)
    ws = w * sq
    for i in range(3):        # test
        np.add.at(rhs, nodes[:, i], ws * fq * lam[:, i])
        ri = dof[nodes[:, i]]
        for j in range(3):    # trial
            vals = (ws * np.einsum("md,md->m", gH[:, i], gH[:, j])
                    + 0.5 * w * (lam[:, i] * Bg[:, j] - lam[:, j] * Bg[:, i]))
            cj = dof[nodes[:, j]]
            keep = (ri >= 0) & (cj >= 0)
            A.add_batch(ri[keep], cj[keep], vals[keep])
    return A, rhs[interior]


def gls_tau(x, sigma_val, B_val, H):
    """Least-squares stabilization coefficient.

    Pe = |B| H / (2 sigma), tau = H/(2|B|) (coth(Pe) - 1/Pe), with the
    small-Pe series tau = H^2/(12 sigma) (1 - Pe^2/15).
    """
    _ = x
    speed = float(np.linalg.norm(np.asarray(B_val, dtype=float)))
    return float(_gls_tau_values(np.array([float(sigma_val)]), np.array([speed]), H)[0])


def _gls_tau_values(sigma_vals, speeds, H):
    # points where the composed weight dips non-positive (unresolved
    # layers) contribute no stabilization
    tau = np.zeros_like(sigma_vals)
    pos = sigma_vals > 0.0
    pe = np.zeros_like(sigma_vals)
    pe[pos] = speeds[pos] * H / (2.0 * sigma_vals[pos])
    small = pos & (pe < _SMALL_PECLET)
    tau[small] = H * H / (12.0 * sigma_vals[small]) * (1.0 - pe[small] ** 2 / 15.0)
    big = pos & ~small
    tau[big] = H / (2.0 * speeds[big]) * (1.0 / np.tanh(pe[big]) - 1.0 / pe[big])
    return tau


def assemble_gls_terms(mesh_H, sigma_at, B_at, b, f, quad_degree=5, quad_mesh=None):
    """Least-squares increments sum_K (tau sigma b.grad u, sigma b.grad v)
    and load sum_K (tau sigma f, sigma b.grad v), on interior dofs."""
    if quad_mesh is None:
        quad_mesh = mesh_H
    flat, w, ct, nodes, lam, gH = _cross_quad_data(mesh_H, quad_mesh, quad_degree)

    sq = np.asarray(sigma_at(flat), dtype=float).reshape(-1)
    Bq = np.asarray(B_at(flat), dtype=float).reshape(-1, 2)
    speeds = np.linalg.norm(Bq, axis=1)
    tau = _gls_tau_values(sq, speeds, ms.stab_length(mesh_H))

    bq = b.b_at(flat)
    bg = np.einsum("md,mvd->mv", bq, gH)
    fq = _f_values(f, flat)

    interior, dof = _interior_dof_map(mesh_H)
    A = SparseMatrix(len(interior))
    rhs = np.zeros(mesh_H.num_nodes)
    core = w * tau * sq * sq
    for i in range(3):
        np.add.at(rhs, nodes[:, i], core * fq * bg[:, i])
        ri = dof[nodes[:, i]]
        for j in range(3):
            vals = core * bg[:, j] * bg[:, i]
            cj = dof[nodes[:, j]]
            keep = (ri >= 0) & (cj >= 0)
            A.add_batch(ri[keep], cj[keep], vals[keep])
    return A, rhs[interior]


def assemble_plain(mesh_H, b, f, quad_degree=5):
    """Unstabilized Galerkin system: (grad u, grad v) + (b.grad u, v) = (f, v)."""
    rule, qp, w2a = _quad_data(mesh_H, quad_degree)
    tris, grads = mesh_H.triangles, mesh_H.tri_grads
    nt, nq = qp.shape[0], qp.shape[1]
    flat = qp.reshape(-1, 2)
    bq = b.b_at(flat).reshape(nt, nq, 2)
    bg = np.einsum("tqd,tvd->tqv", bq, grads)
    fq = _f_values(f, flat).reshape(nt, nq)
    lamq = rule.points

    interior, dof = _interior_dof_map(mesh_H)
    A = SparseMatrix(len(interior))
    rhs = np.zeros(mesh_H.num_nodes)
    for i in range(3):
        np.add.at(rhs, tris[:, i], np.einsum("tq,tq->t", w2a * lamq[None, :, i], fq))
        for j in range(3):
            gij = mesh_H.tri_areas * np.einsum("td,td->t", grads[:, i], grads[:, j])
            adv = np.einsum("tq,tq->t", w2a * lamq[None, :, i], bg[:, :, j])
            ri, cj = dof[tris[:, i]], dof[tris[:, j]]
            keep = (ri >= 0) & (cj >= 0)
            A.add_batch(ri[keep], cj[keep], (gij + adv)[keep])
    return A, rhs[interior]


def _embed(mesh, interior_values):
    coeffs = np.zeros(mesh.num_nodes)
    coeffs[mesh.interior_indices()] = interior_values
    return FeFunction(mesh=mesh, coeffs=coeffs)


def _ones_sigma(pts):
    return np.ones(len(pts))


def solve_u(config, test, sigma_inputs=None, mesh_H=None):
    """Dispatch one method run and return the coarse-mesh solution.

    A PositivityError propagates when a weighted method is inapplicable
    (some triangle integral of the weight fails to be positive); callers
    record such runs instead of solving.
    """
    from .mesh import build_uniform_mesh

    if mesh_H is None:
        mesh_H = build_uniform_mesh(config.H_inv)
    A, rhs = build_system(config, test, sigma_inputs, mesh_H)
    return _embed(mesh_H, solve_direct(A, rhs))


def build_system(config, test, sigma_inputs=None, mesh_H=None):
    """Assemble the linear system of one method run (the offline stage
    for the weighted methods once the weights themselves exist)."""
    from .mesh import build_uniform_mesh

    cfg = config
    method = Method(cfg.method)
    if mesh_H is None:
        mesh_H = build_uniform_mesh(cfg.H_inv)
    si = sigma_inputs or SigmaInputs()

    if method is Method.P1:
        A, rhs = assemble_plain(mesh_H, test, cfg.f, cfg.quad_degree)
    elif method is Method.P1GLS:
        A, rhs = assemble_plain(mesh_H, test, cfg.f, cfg.quad_degree)
        Ag, rg = assemble_gls_terms(
            mesh_H, _ones_sigma, test.b_at, test, cfg.f, cfg.quad_degree
        )
        A.add_batch(*_triplets(Ag))
        rhs = rhs + rg
    elif method is Method.Sigma1Exact:
        if not test.irrotational:
            raise ValueError(
                f"analytic weight unavailable for non-irrotational field {test.test_id!r}"
            )
        sigma_at = ms.sigma1_exact_callable(test)
        A, rhs = assemble_ss(
            mesh_H, sigma_at, lambda pts: np.zeros((len(pts), 2)), cfg.f, cfg.quad_degree
        )
    elif method is Method.Sigma1h:
        res1 = _require(si.sigma1, "Sigma1h needs the computed primary weight")
        if not res1.elementwise_positive_on(mesh_H):
            raise PositivityError(
                "primary weight is not element-positive on the coarse mesh"
            )
        s1 = res1.sigma
        A, rhs = assemble_ss(
            mesh_H,
            lambda pts: _values_only(s1, pts),
            lambda pts: ms.corrected_flux_sigma1_at(s1, test, pts),
            cfg.f,
            cfg.quad_degree,
            quad_mesh=s1.mesh,
        )
    elif method in (Method.Sigma2h, Method.Sigma2hGLS):
        sigma2, kappa, s1, s20 = _composed_sigma2(si, mesh_H)
        A, rhs = assemble_ss(
            mesh_H,
            lambda pts: _values_only(sigma2, pts),
            lambda pts: ms.corrected_flux_sigma2_at(s20, s1, kappa, test, pts),
            cfg.f,
            cfg.quad_degree,
            require_positive_weight=False,
            quad_mesh=sigma2.mesh,
        )
        if method is Method.Sigma2hGLS:
            if cfg.gls_field == "B2":
                B_at = lambda pts: ms.flux_values_at(sigma2, test, pts)
            else:
                B_at = lambda pts: ms.corrected_flux_sigma2_at(s20, s1, kappa, test, pts)
            Ag, rg = assemble_gls_terms(
                mesh_H,
                lambda pts: _values_only(sigma2, pts),
                B_at,
                test,
                cfg.f,
                cfg.quad_degree,
                quad_mesh=sigma2.mesh,
            )
            A.add_batch(*_triplets(Ag))
            rhs = rhs + rg
    else:
        raise ValueError(f"unknown method {method}")
    A.tocsr()          # compress triplets now; compression is assembly work
    return A, rhs


def _values_only(u, pts):
    from .fem import evaluate_many

    return evaluate_many(u, pts)[0]


def _require(value, message):
    if value is None:
        raise ValueError(message)
    return value


def _composed_sigma2(si, mesh_H):
    """Composed weight from the inputs, computed once per run."""
    if si.sigma2 is not None and si.kappa is not None:
        s1 = _require(si.sigma1, "composed weight needs the primary weight too").sigma
        s20 = _require(si.sigma2_0, "composed weight needs the auxiliary weight").sigma
        return si.sigma2, si.kappa, s1, s20
    res1 = _require(si.sigma1, "Sigma2h needs the primary weight")
    res20 = _require(si.sigma2_0, "Sigma2h needs the auxiliary weight")
    sigma2, kappa = ms.compose_sigma2_auto(res20.sigma, res1.sigma, mesh_H)
    si.sigma2, si.kappa = sigma2, kappa
    return sigma2, kappa, res1.sigma, res20.sigma


def _triplets(A):
    csr = A.tocsr().tocoo()
    return csr.row, csr.col, csr.data
