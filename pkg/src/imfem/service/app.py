"""FastAPI service exposing the solver library.

The service fits the workflow of the method: the expensive weights are
computed (and cached) server-side once, after which many cheap solve and
table queries can be answered.  Numerical failures surface as HTTP 500
with a structured detail; inapplicable method runs are regular responses
with admissible=false.
"""

from fastapi import FastAPI, HTTPException

from .. import __version__, advdiff, experiments as ex, fem, measure as ms
from ..advdiff import Method, MethodConfig, SigmaInputs
from ..linalg import EigenIterationError, SingularMatrixError
from ..measure import IterationError, PositivityError
from ..mesh import build_uniform_mesh
from . import models as md

_NUMERICAL_ERRORS = (IterationError, SingularMatrixError, EigenIterationError)


def _field_payload(u):
    return md.FieldPayload(n=u.mesh.n, values=[float(v) for v in u.coeffs])


def create_app():
    app = FastAPI(title="imfem solve service", version=__version__)

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/sigma", response_model=md.SigmaResponse)
    def sigma(req: md.SigmaRequest):
        test = ex.velocity_catalog(req.test)
        mesh_h = build_uniform_mesh(req.h_inv)
        mesh_H = build_uniform_mesh(req.H_inv)
        try:
            if req.measure == "sigma1":
                res = ms.compute_sigma1(
                    mesh_h, mesh_H, test, req.lam, req.tol, req.max_iter, req.quad_degree
                )
            else:
                res = ms.compute_sigma2_0(
                    mesh_h, test, req.lam, req.tol, req.max_iter, req.quad_degree
                )
        except _NUMERICAL_ERRORS as exc:
            raise HTTPException(500, detail={"kind": "numerical", "message": str(exc)})
        return md.SigmaResponse(
            field=_field_payload(res.sigma),
            iterations=res.iterations,
            final_deviation=res.final_deviation,
            mean=res.mean,
            element_positive_on_coarse=res.elementwise_positive_on(mesh_H),
        )

    @app.post("/solve", response_model=md.SolveResponse)
    def solve(req: md.SolveRequest):
        test = ex.velocity_catalog(req.test)
        method = Method(req.method)
        if method is Method.Sigma1Exact and not test.irrotational:
            raise HTTPException(
                422,
                detail={"kind": "usage",
                        "message": f"method Sigma1Exact needs an irrotational field, "
                                   f"test {req.test!r} is not"},
            )
        if method.needs_fine_mesh and req.h_inv is None:
            raise HTTPException(
                422, detail={"kind": "usage",
                             "message": f"method {req.method} needs --h"},
            )
        si = SigmaInputs()
        iterations = 0
        try:
            if method.needs_fine_mesh:
                cache = ex._SigmaCache(req.cache_dir, req.lam, req.tol,
                                       req.max_iter, req.quad_degree)
                mesh_h = build_uniform_mesh(req.h_inv)
                mesh_H = build_uniform_mesh(req.H_inv)
                si.sigma1 = cache.get("sigma1", test, mesh_h, mesh_H)
                iterations = si.sigma1.iterations
                if method.uses_sigma2:
                    si.sigma2_0 = cache.get("sigma2_0", test, mesh_h)
                    iterations += si.sigma2_0.iterations
            cfg = MethodConfig(method=method, H_inv=req.H_inv, h_inv=req.h_inv,
                               quad_degree=req.quad_degree, gls_field=req.gls_field)
            u = advdiff.solve_u(cfg, test, sigma_inputs=si)
        except PositivityError:
            return md.SolveResponse(field=None, admissible=False,
                                    kappa=si.kappa, iterations=iterations)
        except _NUMERICAL_ERRORS as exc:
            raise HTTPException(500, detail={"kind": "numerical", "message": str(exc)})
        return md.SolveResponse(field=_field_payload(u), admissible=True,
                                kappa=si.kappa, iterations=iterations)

    @app.post("/table", response_model=md.TableResponse)
    def table(req: md.TableRequest):
        try:
            reports = ex.run_table(
                req.tests, req.methods, req.H_inv, req.h_inv_list, req.n_ref,
                req.lam, req.tol, req.max_iter, req.quad_degree,
                req.cache_dir, req.gls_field,
            )
        except _NUMERICAL_ERRORS as exc:
            raise HTTPException(500, detail={"kind": "numerical", "message": str(exc)})
        return md.TableResponse(rows=[md.TableRow(**r.__dict__) for r in reports])

    @app.post("/convergence", response_model=md.ConvergenceResponse)
    def convergence(req: md.ConvergenceRequest):
        try:
            if req.study == "sigma1":
                errors, order = ex.sigma1_convergence_study(
                    req.test, tuple(req.n_list), req.H_inv, req.lam, req.tol
                )
            else:
                errors, order = ex.manufactured_convergence_study(
                    req.method, tuple(req.H_inv_list), req.h_ratio, req.lam, req.tol
                )
        except ValueError as exc:
            raise HTTPException(422, detail={"kind": "usage", "message": str(exc)})
        except _NUMERICAL_ERRORS as exc:
            raise HTTPException(500, detail={"kind": "numerical", "message": str(exc)})
        return md.ConvergenceResponse(errors=[float(e) for e in errors], order=float(order))

    @app.post("/coercivity", response_model=md.CoercivityResponse)
    def coercivity(req: md.CoercivityRequest):
        try:
            value = ex.coercivity_diagnostic(
                build_uniform_mesh(req.H_inv), ex.velocity_catalog(req.test)
            )
        except _NUMERICAL_ERRORS as exc:
            raise HTTPException(500, detail={"kind": "numerical", "message": str(exc)})
        return md.CoercivityResponse(value=float(value))

    return app


app = create_app()
