"""Sparse storage, sparse LU and conjugate gradients.

The LU factorization is SuperLU (via scipy) with a COLAMD column ordering and
partial row pivoting; this module only adds the contracts the rest of the
package relies on: singularity detection, transpose solves and dimension
checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgumentError, NonConvergenceError, SingularMatrixError

PIVOT_RTOL = 1e-14
LU_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    shape: tuple

    def __post_init__(self):
        m, _ = self.shape
        if len(self.indptr) != m + 1 or self.indptr[0] != 0 or np.any(np.diff(self.indptr) < 0):
            raise InvalidArgumentError("row offsets must be monotone, starting at 0")
        if self.indptr[-1] != len(self.indices) or len(self.indices) != len(self.data):
            raise InvalidArgumentError("nnz mismatch between offsets, indices and values")
        for arr in (self.indptr, self.indices, self.data):
            arr.flags.writeable = False

    @classmethod
    def from_scipy(cls, A) -> "CsrMatrix":
        A = sp.csr_matrix(A, dtype=float, copy=True)
        A.sum_duplicates()
        A.sort_indices()
        return cls(A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data, A.shape)

    @classmethod
    def from_dense(cls, A) -> "CsrMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(A, dtype=float)))

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        return cls.from_scipy(sp.identity(n, format="csr"))

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    def toarray(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.data))) if self.nnz else 0.0


def as_csr(A) -> CsrMatrix:
    if isinstance(A, CsrMatrix):
        return A
    if sp.issparse(A):
        return CsrMatrix.from_scipy(A)
    return CsrMatrix.from_dense(A)


def spmv(A: CsrMatrix, x, transpose: bool = False) -> np.ndarray:
    A = as_csr(A)
    x = np.asarray(x, dtype=float)
    m, n = A.shape
    if x.shape != ((m,) if transpose else (n,)):
        raise InvalidArgumentError(f"spmv: vector of shape {x.shape} does not match {A.shape}")
    S = A.to_scipy()
    return S.T @ x if transpose else S @ x


def write_matrix_market(A: CsrMatrix, path) -> None:
    scipy.io.mmwrite(str(path), as_csr(A).to_scipy(), precision=17)


@dataclass(frozen=True, eq=False)
class LuFactorization:
    """``Pr A Pc = L U``; ``perm_r``/``perm_c`` are SuperLU's permutation vectors."""

    n: int
    L: sp.csc_matrix
    U: sp.csc_matrix
    perm_r: np.ndarray
    perm_c: np.ndarray
    _superlu: object

    @property
    def fill(self) -> int:
        return int(self.L.nnz + self.U.nnz)


def lu_factor(A: CsrMatrix, pivot_rtol: float = PIVOT_RTOL) -> LuFactorization:
    """Sparse LU; a pivot below ``pivot_rtol * max|A|`` counts as singular."""
    A = as_csr(A)
    m, n = A.shape
    if m != n:
        raise InvalidArgumentError(f"lu_factor needs a square matrix, got {A.shape}")
    scale = A.max_abs()
    if scale == 0.0:
        raise SingularMatrixError("matrix is zero")
    try:
        lu = spla.splu(A.to_scipy().tocsc(), permc_spec="COLAMD", diag_pivot_thresh=1.0)
    except RuntimeError as exc:
        raise SingularMatrixError(str(exc)) from None
    pivots = np.abs(lu.U.diagonal())
    if pivots.min() < pivot_rtol * scale:
        raise SingularMatrixError(f"pivot {pivots.min():.3e} below {pivot_rtol:g} * max|A| = {pivot_rtol * scale:.3e}")
    return LuFactorization(n, lu.L, lu.U, lu.perm_r, lu.perm_c, lu)


def lu_solve(F: LuFactorization, b, transpose: bool = False) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.shape[0] != F.n:
        raise InvalidArgumentError(f"right-hand side of length {b.shape[0]} for a {F.n}x{F.n} factorization")
    return F._superlu.solve(b, trans="T" if transpose else "N")


def cg(apply, b, tol: float = 1e-12, maxit: int = 1000, x0=None):
    """Unpreconditioned conjugate gradients for an SPD operator ``apply``.

    Stops on the true relative residual ``|b - apply(x)| / |b| <= tol``. When
    the recursively updated residual claims convergence but the true one does
    not, the iteration restarts from the current iterate.

    Returns ``(x, iterations)``.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0 and x0 is None:
        return x, 0
    target = tol * bnorm

    r = b - apply(x)
    best = (np.linalg.norm(r), x.copy())
    if best[0] <= target:
        return x, 0
    p = r.copy()
    rr = r @ r
    it = 0
    while it < maxit:
        Ap = apply(p)
        pAp = p @ Ap
        if pAp <= 0.0:
            raise NonConvergenceError("operator is not positive definite", best[1], best[0] / bnorm, it)
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        rr_new = r @ r
        if np.sqrt(rr_new) <= target:
            r = b - apply(x)
            true_norm = np.linalg.norm(r)
            if true_norm < best[0]:
                best = (true_norm, x.copy())
            if true_norm <= target:
                return x, it
            p = r.copy()
            rr = r @ r
            continue
        p = r + (rr_new / rr) * p
        rr = rr_new
    true_norm = np.linalg.norm(b - apply(x))
    if true_norm < best[0]:
        best = (true_norm, x.copy())
    raise NonConvergenceError(
        f"CG did not reach tol={tol:g} in {maxit} iterations (relative residual {best[0] / bnorm:.3e})",
        best[1], best[0] / bnorm, it,
    )
