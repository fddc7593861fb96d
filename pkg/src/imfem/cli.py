"""Command-line client of the solve service.

Every subcommand builds a request model, sends it to the service (an
in-process instance by default, or a running server via --server) and
renders the response.  Exit codes: 0 success, 1 usage error, 2 numerical
failure.
"""

import argparse
import os
import sys

import httpx

from . import fem
from .experiments import CACHE_ENV_VAR, RunReport, reports_to_csv
from .mesh import build_uniform_mesh
from .service import create_app as create_service_app
from .service.models import METHOD_NAMES

_TESTS = ("i", "ii", "iii", "iv", "v", "vi", "vii")
_IRROTATIONAL = ("i", "ii", "iii", "iv")


class _UsageError(Exception):
    pass


def _int_list(text):
    try:
        return [int(tok) for tok in text.split(",") if tok]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser():
    p = argparse.ArgumentParser(
        prog="imfem",
        description="Weighted P1 solves of strongly advected advection-diffusion problems.",
    )
    p.add_argument("--server", help="base URL of a running service "
                                    "(default: run the service in-process)")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp, fine_mesh=True):
        sp.add_argument("--test", required=True, choices=_TESTS)
        sp.add_argument("--H", dest="H_inv", type=int, default=16,
                        help="inverse coarse mesh size (default 16)")
        if fine_mesh:
            sp.add_argument("--h", dest="h_inv", type=int,
                            help="inverse fine mesh size for the weights")
        sp.add_argument("--lambda", dest="lam", type=float, default=1e-3,
                        help="damping parameter of the weight iteration")
        sp.add_argument("--tol", type=float, default=1e-3,
                        help="stopping tolerance of the weight iteration")
        sp.add_argument("--max-iter", type=int, default=500)
        sp.add_argument("--quad-degree", type=int, default=5)

    sp = sub.add_parser("sigma", help="compute and persist an invariant weight")
    common(sp)
    sp.add_argument("--measure", choices=("sigma1", "sigma2_0"), default="sigma1")
    sp.add_argument("--out", required=True, help="output field file")

    sp = sub.add_parser("solve", help="solve the coarse problem with one method")
    common(sp)
    sp.add_argument("--method", required=True, choices=METHOD_NAMES)
    sp.add_argument("--gls-field", choices=("B2", "B2bar"), default="B2")
    sp.add_argument("--sigma-cache-dir", help=f"weight cache (or ${CACHE_ENV_VAR})")
    sp.add_argument("--out", required=True, help="output field file")

    sp = sub.add_parser("table", help="error/cost table for tests and methods")
    sp.add_argument("--test", required=True,
                    help="comma-separated catalog ids, e.g. i,ii")
    sp.add_argument("--method", default=",".join(METHOD_NAMES),
                    help="comma-separated method names (default: all)")
    sp.add_argument("--H", dest="H_inv", type=int, default=16)
    sp.add_argument("--h-list", dest="h_inv_list", type=_int_list,
                    help="inverse fine mesh sizes (default: published grid per test)")
    sp.add_argument("--ref", dest="n_ref", type=int, default=512,
                    help="inverse mesh size of the reference solution")
    sp.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    sp.add_argument("--tol", type=float, default=1e-3)
    sp.add_argument("--max-iter", type=int, default=500)
    sp.add_argument("--quad-degree", type=int, default=5)
    sp.add_argument("--gls-field", choices=("B2", "B2bar"), default="B2")
    sp.add_argument("--sigma-cache-dir")
    sp.add_argument("--out", required=True, help="output CSV file")

    sp = sub.add_parser("convergence", help="mesh-refinement study")
    sp.add_argument("--study", choices=("sigma1", "manufactured"), default="manufactured")
    sp.add_argument("--test", choices=_TESTS, default="i",
                    help="catalog id for the sigma1 study")
    sp.add_argument("--n-list", type=_int_list, default=[32, 64, 128],
                    help="fine mesh sizes for the sigma1 study")
    sp.add_argument("--H-list", dest="H_inv_list", type=_int_list, default=[16, 32, 64],
                    help="coarse mesh sizes for the manufactured study")
    sp.add_argument("--h-ratio", type=int, default=4)
    sp.add_argument("--method", choices=METHOD_NAMES, default="Sigma1h")
    sp.add_argument("--H", dest="H_inv", type=int, default=16)
    sp.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    sp.add_argument("--tol", type=float, default=1e-3)

    sp = sub.add_parser("coercivity", help="smallest symmetric-part eigenvalue")
    sp.add_argument("--test", required=True, choices=_TESTS)
    sp.add_argument("--H", dest="H_inv", type=int, default=16)

    sp = sub.add_parser("serve", help="run the HTTP service")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    return p


def _client(args):
    if args.server:
        return httpx.Client(base_url=args.server, timeout=None)
    # drive the service in-process through its ASGI interface
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        from starlette.testclient import TestClient

    return TestClient(create_service_app(), raise_server_exceptions=False)


def _post(client, path, payload):
    resp = client.post(path, json=payload)
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", {})
        except Exception:
            detail = {}
        message = detail.get("message", resp.text) if isinstance(detail, dict) else str(detail)
        kind = detail.get("kind", "usage") if isinstance(detail, dict) else "usage"
        print(f"error: {message}", file=sys.stderr)
        sys.exit(2 if kind == "numerical" else 1)
    return resp.json()


def _write_field(payload, path):
    import numpy as np

    u = fem.FeFunction(mesh=build_uniform_mesh(payload["n"]),
                       coeffs=np.asarray(payload["values"], dtype=float))
    fem.save_field(u, path)


def _cache_dir(args):
    return getattr(args, "sigma_cache_dir", None) or os.environ.get(CACHE_ENV_VAR)


def _cmd_sigma(args, client):
    data = _post(client, "/sigma", {
        "test": args.test, "h_inv": args.h_inv, "H_inv": args.H_inv,
        "measure": args.measure, "lam": args.lam, "tol": args.tol,
        "max_iter": args.max_iter, "quad_degree": args.quad_degree,
    })
    _write_field(data["field"], args.out)
    print(f"{args.measure} for test ({args.test}) at h=1/{args.h_inv}: "
          f"{data['iterations']} iterations, deviation {data['final_deviation']:.3e}, "
          f"mean {data['mean']:.6f} -> {args.out}")
    return 0


def _cmd_solve(args, client):
    if args.method == "Sigma1Exact" and args.test not in _IRROTATIONAL:
        raise _UsageError(
            f"method Sigma1Exact needs an irrotational field; test ({args.test}) is not"
        )
    data = _post(client, "/solve", {
        "test": args.test, "method": args.method, "H_inv": args.H_inv,
        "h_inv": args.h_inv, "quad_degree": args.quad_degree, "lam": args.lam,
        "tol": args.tol, "max_iter": args.max_iter, "gls_field": args.gls_field,
        "cache_dir": _cache_dir(args),
    })
    if not data["admissible"]:
        print(f"method {args.method} is inapplicable here "
              "(weight not element-positive on the coarse mesh)", file=sys.stderr)
        return 2
    _write_field(data["field"], args.out)
    print(f"{args.method} on test ({args.test}), H=1/{args.H_inv}"
          + (f", h=1/{args.h_inv}" if args.h_inv else "") + f" -> {args.out}")
    return 0


def _cmd_table(args, client):
    tests = [t for t in args.test.split(",") if t]
    for t in tests:
        if t not in _TESTS:
            raise _UsageError(f"unknown test id {t!r}")
    methods = [m for m in args.method.split(",") if m]
    for m in methods:
        if m not in METHOD_NAMES:
            raise _UsageError(f"unknown method {m!r}")
    data = _post(client, "/table", {
        "tests": tests, "methods": methods, "H_inv": args.H_inv,
        "h_inv_list": args.h_inv_list, "n_ref": args.n_ref, "lam": args.lam,
        "tol": args.tol, "max_iter": args.max_iter, "quad_degree": args.quad_degree,
        "gls_field": args.gls_field, "cache_dir": _cache_dir(args),
    })
    reports = [RunReport(**row) for row in data["rows"]]
    with open(args.out, "w") as fh:
        fh.write(reports_to_csv(reports))
    print(f"{len(reports)} rows -> {args.out}")
    return 0


def _cmd_convergence(args, client):
    data = _post(client, "/convergence", {
        "study": args.study, "test": args.test, "n_list": args.n_list,
        "H_inv": args.H_inv, "method": args.method, "H_inv_list": args.H_inv_list,
        "h_ratio": args.h_ratio, "lam": args.lam, "tol": args.tol,
    })
    sizes = args.n_list if args.study == "sigma1" else args.H_inv_list
    for n, e in zip(sizes, data["errors"]):
        print(f"1/{n}: {e:.6e}")
    print(f"fitted order: {data['order']:.3f}")
    return 0


def _cmd_coercivity(args, client):
    data = _post(client, "/coercivity", {"test": args.test, "H_inv": args.H_inv})
    print(f"{data['value']:.6g}")
    return 0


def _cmd_serve(args, _client_unused):
    import uvicorn

    uvicorn.run(create_service_app(), host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "sigma": _cmd_sigma,
    "solve": _cmd_solve,
    "table": _cmd_table,
    "convergence": _cmd_convergence,
    "coercivity": _cmd_coercivity,
    "serve": _cmd_serve,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage problems; this tool reserves
        # 2 for numerical failures
        return 0 if exc.code == 0 else 1

    try:
        if args.subcommand == "serve":
            return _cmd_serve(args, None)
        with _client(args) as client:
            return _COMMANDS[args.subcommand](args, client)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
