import numpy as np
import pytest

from imfem import advdiff, experiments as ex, fem, measure as ms
from imfem.advdiff import (
    Method,
    MethodConfig,
    SigmaInputs,
    assemble_gls_terms,
    assemble_plain,
    assemble_ss,
    gls_tau,
    solve_u,
)
from imfem.fem import FeFunction, interpolate_nodal, triangle_rule
from imfem.measure import PositivityError, constant_field
from imfem.mesh import build_uniform_mesh


def ones_sigma(pts):
    return np.ones(len(pts))


def zero_flux(pts):
    return np.zeros((len(pts), 2))


# --- skew structure ---------------------------------------------------------

def test_skew_identity(mesh16, rng):
    # the advective block contributes nothing to the quadratic form
    field = ex.velocity_catalog("ii")
    sigma = ms.sigma1_exact_callable(field)
    flux = lambda pts: ms.flux_values_at(
        interpolate_nodal(mesh16, sigma), field, pts
    )
    A, _ = assemble_ss(mesh16, sigma, flux, 1.0)
    D, _ = assemble_ss(mesh16, sigma, zero_flux, 1.0)
    Ac, Dc = A.tocsr(), D.tocsr()
    scale = abs(Ac).max()
    for _ in range(20):
        w = rng.standard_normal(Ac.shape[0])
        qa = w @ (Ac @ w)
        qd = w @ (Dc @ w)
        assert abs(qa - qd) <= 1e-12 * scale * (w @ w)


def test_reduces_to_standard_skew_form(mesh8):
    # sigma = 1, B = b gives the classical skew-symmetrized operator;
    # rebuilt here directly as an independent check
    field = constant_field(3.0, -1.0)
    A, rhs = assemble_ss(mesh8, ones_sigma, field.b_at, 1.0)

    rule = triangle_rule(5)
    nn = mesh8.num_nodes
    dense = np.zeros((nn, nn))
    load = np.zeros(nn)
    for t, tri in enumerate(mesh8.triangles):
        verts = mesh8.nodes[tri]
        area = mesh8.tri_areas[t]
        grads = mesh8.tri_grads[t]
        for q, lam_q in enumerate(rule.points):
            w = 2.0 * area * rule.weights[q]
            bq = field.b_at((lam_q @ verts).reshape(1, 2))[0]
            for i in range(3):
                load[tri[i]] += w * lam_q[i]
                for j in range(3):
                    dense[tri[i], tri[j]] += w * (
                        grads[i] @ grads[j]
                        + 0.5 * (lam_q[i] * (bq @ grads[j]) - lam_q[j] * (bq @ grads[i]))
                    )
    interior = mesh8.interior_indices()
    assert np.abs(A.toarray() - dense[np.ix_(interior, interior)]).max() < 1e-12
    assert np.abs(rhs - load[interior]).max() < 1e-13


def test_weighted_entries_match_dense_assembly():
    # analytic weight 1 + x against an independent dense loop
    mesh = build_uniform_mesh(2)
    field = constant_field(1.0, 0.0)
    sigma = lambda pts: 1.0 + np.atleast_2d(pts)[:, 0]
    flux = lambda pts: np.column_stack([
        np.full(len(np.atleast_2d(pts)), 0.3),
        np.full(len(np.atleast_2d(pts)), -0.2),
    ])
    A, rhs = assemble_ss(mesh, sigma, flux, 1.0)

    rule = triangle_rule(5)
    nn = mesh.num_nodes
    dense = np.zeros((nn, nn))
    load = np.zeros(nn)
    for t, tri in enumerate(mesh.triangles):
        verts = mesh.nodes[tri]
        area = mesh.tri_areas[t]
        grads = mesh.tri_grads[t]
        for q, lam_q in enumerate(rule.points):
            xq = lam_q @ verts
            w = 2.0 * area * rule.weights[q]
            sq = 1.0 + xq[0]
            Bq = np.array([0.3, -0.2])
            for i in range(3):
                load[tri[i]] += w * sq * lam_q[i]
                for j in range(3):
                    dense[tri[i], tri[j]] += w * (
                        sq * grads[i] @ grads[j]
                        + 0.5 * (lam_q[i] * (Bq @ grads[j]) - lam_q[j] * (Bq @ grads[i]))
                    )
    interior = mesh.interior_indices()
    assert np.abs(A.toarray() - dense[np.ix_(interior, interior)]).max() < 1e-13
    assert np.abs(rhs - load[interior]).max() < 1e-14


def test_positivity_gate():
    mesh = build_uniform_mesh(4)
    sigma = lambda pts: np.atleast_2d(pts)[:, 0] - 0.5   # negative on the left half
    with pytest.raises(PositivityError):
        assemble_ss(mesh, sigma, zero_flux, 1.0)
    assemble_ss(mesh, sigma, zero_flux, 1.0, require_positive_weight=False)


# --- least-squares stabilization ---------------------------------------------

def test_gls_tau_small_field_limit():
    assert abs(gls_tau((0, 0), 2.0, (0.0, 0.0), 0.1) - 0.01 / 24.0) < 1e-15


def test_gls_tau_unit_peclet():
    H = 0.125
    tau = gls_tau((0, 0), 1.0, (2.0 / H, 0.0), H)
    assert abs(tau - H * H / 4.0 * (1.0 / np.tanh(1.0) - 1.0)) < 1e-15


def test_gls_tau_positive(rng):
    for _ in range(50):
        sigma = float(rng.uniform(0.01, 10.0))
        Bv = rng.standard_normal(2) * 10 ** rng.uniform(-6, 3)
        assert gls_tau((0, 0), sigma, Bv, 0.0625) > 0.0


def test_gls_increment_zero_for_zero_drift(mesh8):
    field = constant_field(0.0, 0.0)
    A, rhs = assemble_gls_terms(mesh8, ones_sigma, field.b_at, field, 1.0)
    assert abs(A.tocsr()).max() == 0.0
    assert np.abs(rhs).max() == 0.0


def test_gls_increment_positive_semidefinite(mesh8, rng):
    field = ex.velocity_catalog("ii")
    A, _ = assemble_gls_terms(mesh8, ones_sigma, field.b_at, field, 1.0)
    dense = A.toarray()
    assert np.abs(dense - dense.T).max() < 1e-12 * max(1.0, abs(dense).max())
    eigs = np.linalg.eigvalsh(0.5 * (dense + dense.T))
    assert eigs.min() > -1e-10 * max(1.0, eigs.max())


# --- solves -------------------------------------------------------------------

def test_zero_load_gives_zero(mesh8):
    field = ex.velocity_catalog("i")
    for method in ("P1", "P1GLS", "Sigma1Exact"):
        cfg = MethodConfig(method=method, H_inv=8, f=0.0)
        u = solve_u(cfg, field, mesh_H=mesh8)
        assert np.abs(u.coeffs).max() < 1e-12


def test_all_methods_coincide_for_pure_diffusion(mesh8):
    field = constant_field(0.0, 0.0)
    mesh_h = build_uniform_mesh(16)
    si = SigmaInputs(
        sigma1=ms.compute_sigma1(mesh_h, mesh8, field),
        sigma2_0=ms.compute_sigma2_0(mesh_h, field),
    )
    sols = []
    for method in ("P1", "P1GLS", "Sigma1Exact", "Sigma1h", "Sigma2h", "Sigma2hGLS"):
        h_inv = 16 if Method(method).needs_fine_mesh else None
        cfg = MethodConfig(method=method, H_inv=8, h_inv=h_inv)
        sols.append(solve_u(cfg, field, sigma_inputs=si, mesh_H=mesh8).coeffs)
    base = sols[0]
    for other in sols[1:]:
        assert np.abs(other - base).max() < 1e-9


def test_discrete_coercivity(mesh16, sigma1_i_32, test_i, rng):
    # the weighted quadratic form dominates the bare stiffness form times
    # the smallest quadrature value of the weight
    s1 = sigma1_i_32.sigma
    A, _ = assemble_ss(
        mesh16,
        lambda p: fem.evaluate_many(s1, p)[0],
        lambda p: ms.corrected_flux_sigma1_at(s1, test_i, p),
        1.0,
        quad_mesh=s1.mesh,
    )
    K, _ = assemble_ss(mesh16, ones_sigma, zero_flux, 1.0, quad_mesh=s1.mesh)
    rule = triangle_rule(5)
    qp = np.einsum("qv,tvd->tqd", rule.points, s1.mesh.nodes[s1.mesh.triangles])
    smin = fem.evaluate_many(s1, qp.reshape(-1, 2))[0].min()
    Ac, Kc = A.tocsr(), K.tocsr()
    for _ in range(20):
        w = rng.standard_normal(Ac.shape[0])
        assert w @ (Ac @ w) >= smin * (w @ (Kc @ w)) - 1e-10


@pytest.mark.slow
@pytest.mark.parametrize("tid", ["i", "ii", "iii", "iv", "v", "vi", "vii"])
def test_unconditional_solvability(tid):
    # the weighted methods solve at every coarse size with the fine mesh
    # held fixed
    field = ex.velocity_catalog(tid)
    mesh_h = build_uniform_mesh(64)
    for H_inv in (4, 8, 16):
        mesh_H = build_uniform_mesh(H_inv)
        si = SigmaInputs(
            sigma1=ms.compute_sigma1(mesh_h, mesh_H, field),
            sigma2_0=ms.compute_sigma2_0(mesh_h, field),
        )
        for method in ("Sigma1h", "Sigma2h"):
            cfg = MethodConfig(method=method, H_inv=H_inv, h_inv=64)
            u = solve_u(cfg, field, sigma_inputs=si, mesh_H=mesh_H)
            assert np.isfinite(u.coeffs).all()


def test_gls_consistency_residual_shrinks():
    # inserting the interpolant of the manufactured solution leaves a
    # residual whose dual norm shrinks at first order
    field, f, _ = ex.manufactured_problem()
    resids = []
    for H_inv in (8, 16, 32):
        mesh = build_uniform_mesh(H_inv)
        A, rhs = assemble_plain(mesh, field, f)
        Ag, rg = assemble_gls_terms(mesh, ones_sigma, field.b_at, field, f)
        u_I = interpolate_nodal(
            mesh, lambda p: np.sin(np.pi * np.atleast_2d(p)[:, 0])
            * np.sin(np.pi * np.atleast_2d(p)[:, 1])
        )
        interior = mesh.interior_indices()
        r = (A.tocsr() + Ag.tocsr()) @ u_I.coeffs[interior] - (rhs + rg)
        # dual norm against the H1 Gram matrix of the interior space
        K, _ = assemble_ss(mesh, ones_sigma, zero_flux, 0.0)
        M = ms.assemble_mass(mesh).tocsr()[np.ix_(interior, interior)]
        from imfem.linalg import SparseMatrix, solve_direct

        G = SparseMatrix.from_csr((K.tocsr() + M).tocsr())
        resids.append(float(np.sqrt(r @ solve_direct(G, r))))
    order = ex.fit_order([1 / 8, 1 / 16, 1 / 32], resids)
    assert order > 0.7


def test_sigma1exact_requires_irrotational():
    field = ex.velocity_catalog("v")
    with pytest.raises(ValueError):
        solve_u(MethodConfig(method="Sigma1Exact", H_inv=8), field)


def test_fine_method_requires_h():
    with pytest.raises(ValueError):
        MethodConfig(method="Sigma1h", H_inv=8)


def test_bad_gls_field():
    with pytest.raises(ValueError):
        MethodConfig(method="P1", H_inv=8, gls_field="nope")
