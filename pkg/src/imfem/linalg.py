"""Sparse matrices, direct solves, and a smallest-eigenvalue diagnostic.

Storage accumulates (row, col, value) triplets and compresses to CSR on
demand; duplicates are summed during compression.  Solves use a sparse LU
factorization, which the weighted systems in this package need because
their coefficient contrast makes them badly conditioned.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SparseMatrix",
    "SingularMatrixError",
    "EigenIterationError",
    "solve_direct",
    "min_generalized_eig_sym",
]


class SingularMatrixError(RuntimeError):
    """Raised when an LU factorization meets a numerically singular matrix."""


class EigenIterationError(RuntimeError):
    """Raised when the eigenvalue iteration fails to converge."""


class SparseMatrix:
    """Square sparse matrix assembled from triplets."""

    def __init__(self, dimension):
        self.dimension = int(dimension)
        self._rows = []
        self._cols = []
        self._vals = []
        self._csr = None

    def add(self, row, col, value):
        self._rows.append(np.array([row], dtype=np.int64))
        self._cols.append(np.array([col], dtype=np.int64))
        self._vals.append(np.array([value], dtype=float))
        self._csr = None

    def add_batch(self, rows, cols, values):
        """Append arrays of triplets (duplicates are summed on compression)."""
        self._rows.append(np.asarray(rows, dtype=np.int64).ravel())
        self._cols.append(np.asarray(cols, dtype=np.int64).ravel())
        self._vals.append(np.asarray(values, dtype=float).ravel())
        self._csr = None

    @classmethod
    def from_csr(cls, csr):
        m = cls(csr.shape[0])
        m._csr = csr.tocsr()
        return m

    def tocsr(self):
        if self._csr is None:
            if self._rows:
                rows = np.concatenate(self._rows)
                cols = np.concatenate(self._cols)
                vals = np.concatenate(self._vals)
            else:
                rows = cols = np.empty(0, dtype=np.int64)
                vals = np.empty(0)
            coo = sp.coo_matrix(
                (vals, (rows, cols)), shape=(self.dimension, self.dimension)
            )
            csr = coo.tocsr()          # sums duplicates, sorts column indices
            csr.sum_duplicates()
            self._csr = csr
        return self._csr

    def toarray(self):
        return self.tocsr().toarray()

    def matvec(self, x):
        return self.tocsr() @ np.asarray(x, dtype=float)

    def __matmul__(self, x):
        return self.matvec(x)

    def symmetric_part(self):
        csr = self.tocsr()
        return SparseMatrix.from_csr((0.5 * (csr + csr.T)).tocsr())

    def factorize(self):
        """LU factorization handle with a solve(rhs) method."""
        try:
            return spla.splu(self.tocsr().tocsc())
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from exc


def solve_direct(A, rhs, refine_steps=2):
    """Solve A x = rhs by sparse LU with refinement sweeps.

    The weighted systems here are strongly graded (diagonal entries span
    tens of orders of magnitude), so the matrix is symmetrically
    equilibrated by its diagonal first; without that, triangular solves
    can leave residual-invisible junk in the near-null tail directions.
    """
    csr = A.tocsr()
    rhs = np.asarray(rhs, dtype=float)
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return np.zeros_like(rhs)

    d = np.abs(csr.diagonal())
    dmax = d.max() if len(d) else 0.0
    s = None
    if dmax > 0.0 and d.min() < 1e-8 * dmax:
        # rows with an exactly-zero diagonal cannot be equilibrated this
        # way and are left alone
        s = np.where(d > 1e-280 * dmax, 1.0 / np.sqrt(np.maximum(d, 1e-300)), 1.0)
        csr = (sp.diags(s) @ csr @ sp.diags(s)).tocsr()
        rhs = rhs * s

    try:
        lu = spla.splu(csr.tocsc())
    except RuntimeError as exc:
        raise SingularMatrixError(str(exc)) from exc
    x = lu.solve(rhs)
    if not np.isfinite(x).all():
        raise SingularMatrixError("non-finite solution from LU solve")
    for _ in range(refine_steps):
        r = rhs - csr @ x
        x = x + lu.solve(r)
    return x * s if s is not None else x


def _gershgorin_min(csr):
    diag = csr.diagonal()
    row_abs = np.asarray(abs(csr).sum(axis=1)).ravel()
    return float(np.min(diag - (row_abs - np.abs(diag))))


def _inertia_below(Scsr, Mcsr, mu):
    """Number of pencil eigenvalues strictly below mu.

    Uses the inertia of S - mu*M, read off the U diagonal of an LU
    factorization restricted to diagonal pivoting (symmetric mode), which
    is a congruence-preserving elimination for symmetric matrices.
    """
    K = (Scsr - mu * Mcsr).tocsc()
    # symmetric ordering plus pure diagonal pivoting keeps the elimination
    # a congruence, so the signs of U's diagonal carry the inertia
    lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options=dict(SymmetricMode=True))
    return int((lu.U.diagonal() < 0.0).sum()), lu


def min_generalized_eig_sym(A, M, tol=1e-6, max_iter=500, seed=0):
    """Smallest eigenvalue of (A + A^T)/2 x = lambda M x, M symmetric positive definite.

    Shift-and-invert inverse iteration on the symmetric part, started at a
    shift below the Gershgorin lower bound and kept below the target
    eigenvalue by inertia counts, which also certify the final bracket.
    """
    S = A.symmetric_part() if isinstance(A, SparseMatrix) else \
        SparseMatrix.from_csr((0.5 * (A.tocsr() + A.tocsr().T)).tocsr())
    Scsr = S.tocsr()
    Mcsr = M.tocsr()
    ndim = Scsr.shape[0]

    mdiag = Mcsr.diagonal()
    if (mdiag <= 0.0).any():
        raise ValueError("mass matrix must have positive diagonal")
    g = _gershgorin_min(Scsr)
    lo = (g / mdiag.min() if g < 0 else g / mdiag.max()) - 1.0

    work = 0

    def inertia(mu):
        nonlocal work
        for _ in range(4):
            work += 1
            try:
                return _inertia_below(Scsr, Mcsr, mu)
            except RuntimeError:
                mu -= max(1e-12, 1e-12 * abs(mu))  # exact hit on an eigenvalue
        raise EigenIterationError("inertia factorization kept failing")

    # certified starting point below the whole spectrum
    cnt, lu = inertia(lo)
    while cnt > 0:
        lo = 2.0 * lo - 1.0
        cnt, lu = inertia(lo)
        if work > max_iter:
            raise EigenIterationError("could not bracket the spectrum from below")

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(ndim)
    x /= np.sqrt(x @ (Mcsr @ x))
    hi = float(x @ (Scsr @ x))     # Rayleigh quotient never sits below the target

    while work < max_iter:
        prev = None
        for _ in range(12):
            work += 1
            y = lu.solve(Mcsr @ x)
            ny = np.sqrt(y @ (Mcsr @ y))
            if ny == 0.0 or not np.isfinite(ny):
                raise EigenIterationError("inverse iteration produced a null vector")
            x = y / ny
            rho = float(x @ (Scsr @ x))
            hi = min(hi, rho)
            if prev is not None and abs(rho - prev) <= 0.1 * tol * max(1.0, abs(rho)):
                break
            prev = rho
            if work >= max_iter:
                break
        gap = tol * max(1.0, abs(hi))
        if hi - lo <= gap:
            return hi
        # certify, or tighten the bracket and re-shift
        cnt, cand = inertia(hi - gap)
        if cnt == 0:
            return hi
        mid = 0.5 * (lo + hi)
        cnt, cand = inertia(mid)
        if cnt == 0:
            lo, lu = mid, cand
        else:
            hi = mid
            _, lu = inertia(lo)
    raise EigenIterationError(f"no convergence within {max_iter} factorizations/iterations")
