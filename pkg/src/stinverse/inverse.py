"""Discrete initial-state reconstruction.

The forward map sends the initial nodal values z to the terminal values
u_T = A z, with

    A = (K_TT - K_IT K_II^{-1} K_TI)^{-1} K_IT K_II^{-1} K_0I M_00^{-1} M_h^T.

The Tikhonov minimizer solves (A^T M_TT A + rho M) z = A^T f. Three routes
are provided and must agree: CG on that reduced system, sparse LU on the
coupled state/adjoint system with z and p_0 eliminated, and sparse LU on the
full seven-block KKT system.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import (
    DofPartition,
    GlobalMatrices,
    assemble_global,
    norm_X_gram,
    terminal_load,
)
from .errors import (
    AssemblyInconsistencyError,
    ConfigurationError,
    GuardError,
    InvalidArgumentError,
    SingularMatrixError,
    SolverFailureError,
)
from .mesh import SpaceTimeMesh
from .oracle import l2_error, sine_coefficients, tikhonov_solution
from .solvers import LU_RESIDUAL_TOL, PIVOT_RTOL, cg, lu_factor, lu_solve


class SolverPath(str, enum.Enum):
    COUPLED = "coupled"
    REDUCED = "reduced"
    FULL_KKT = "kkt"


@dataclass(frozen=True)
class TikhonovConfig:
    rho: float
    path: SolverPath = SolverPath.COUPLED
    # cond(A^T M A + rho M) ~ 1e6 at rho = 1e-14; 1e-12 leaves z off by ~1e-7
    cg_tol: float = 1e-15
    cg_maxit: int = 2000
    delta: float = 0.0

    def __post_init__(self):
        if not self.rho > 0:
            raise ConfigurationError(f"rho must be > 0, got {self.rho!r}")
        if not self.cg_tol > 0:
            raise ConfigurationError("cg_tol must be > 0")
        if self.delta < 0:
            raise ConfigurationError("delta must be >= 0")
        object.__setattr__(self, "path", SolverPath(self.path))


class ForwardOperator:
    """Factorized forward map z -> u_T and its transpose.

    Immutable after construction; ``apply`` and ``apply_transpose`` only read.
    """

    def __init__(self, gm: GlobalMatrices):
        self.gm = gm
        p = gm.partition
        self.n0, self.nI, self.nT = p.n0, p.nI, p.nT
        try:
            self.K_II_lu = lu_factor(gm.K_II)
            self.M_00_lu = lu_factor(gm.M_00)
        except SingularMatrixError as exc:
            raise AssemblyInconsistencyError(f"cannot factorize: {exc}") from None
        # K_II^{-1} K_TI, one column per terminal DOF
        self.KII_inv_KTI = lu_solve(self.K_II_lu, gm.K_TI.toarray())
        self.S_TT = gm.K_TT.toarray() - gm.K_IT @ self.KII_inv_KTI
        scale = np.abs(self.S_TT).max()
        self.S_TT_lu = sla.lu_factor(self.S_TT, check_finite=True)
        if np.abs(np.diag(self.S_TT_lu[0])).min() < 1e-14 * scale:
            raise AssemblyInconsistencyError("terminal Schur complement is singular")

    def _check(self, v, n, name):
        v = np.asarray(v, dtype=float)
        if v.shape != (n,):
            raise InvalidArgumentError(f"{name} must have shape ({n},), got {v.shape}")
        return v

    def initial_trace(self, z) -> np.ndarray:
        """u_0 = M_00^{-1} M_h^T z."""
        z = self._check(z, self.n0, "z")
        return lu_solve(self.M_00_lu, self.gm.M_h.T @ z)

    def apply(self, z) -> np.ndarray:
        u0 = self.initial_trace(z)
        y = lu_solve(self.K_II_lu, self.gm.K_0I @ u0)
        return sla.lu_solve(self.S_TT_lu, self.gm.K_IT @ y)

    def adjoint_fields(self, w):
        """p_T = S^{-T} w, p_I = -K_II^{-T} K_IT^T p_T, p_0 = -M_00^{-1} K_0I^T p_I."""
        w = self._check(w, self.nT, "w")
        pT = sla.lu_solve(self.S_TT_lu, w, trans=1)
        pI = -lu_solve(self.K_II_lu, self.gm.K_IT.T @ pT, transpose=True)
        p0 = -lu_solve(self.M_00_lu, self.gm.K_0I.T @ pI)
        return p0, pI, pT

    def apply_transpose(self, w) -> np.ndarray:
        p0, _, _ = self.adjoint_fields(w)
        return self.gm.M_h @ p0

    def forward_solve(self, z):
        """All state DOFs ``(u0, uI, uT)`` for initial datum z."""
        u0 = self.initial_trace(z)
        uT = self.apply(z)
        uI = -lu_solve(self.K_II_lu, self.gm.K_0I @ u0 + self.gm.K_TI @ uT)
        return u0, uI, uT

    def forward_residual(self, z, u0, uI, uT) -> float:
        """Relative residual of the three-row forward block system."""
        gm = self.gm
        r = np.concatenate([
            gm.M_00 @ u0 - gm.M_h.T @ z,
            gm.K_0I @ u0 + gm.K_II @ uI + gm.K_TI @ uT,
            gm.K_IT @ uI + gm.K_TT @ uT,
        ])
        scale = np.linalg.norm(gm.M_h.T @ z)
        return float(np.linalg.norm(r) / scale) if scale else float(np.linalg.norm(r))

    def reduced_operator(self, rho: float):
        gm = self.gm

        def op(z):
            return self.apply_transpose(gm.M_TT @ self.apply(z)) + rho * (gm.M_h @ z)

        return op

    def dense(self) -> np.ndarray:
        return np.column_stack([self.apply(e) for e in np.eye(self.n0)])

    def dense_transpose(self) -> np.ndarray:
        return np.column_stack([self.apply_transpose(e) for e in np.eye(self.nT)])


def build_forward(gm: GlobalMatrices) -> ForwardOperator:
    return ForwardOperator(gm)


def forward_solve(fo: ForwardOperator, z):
    return fo.forward_solve(z)


def apply_A(fo: ForwardOperator, z) -> np.ndarray:
    return fo.apply(z)


def apply_A_transpose(fo: ForwardOperator, w) -> np.ndarray:
    return fo.apply_transpose(w)


def gradient_residual(fo: ForwardOperator, z, f, rho: float) -> float:
    """|A^T (M_TT A z - f) + rho M z| / |A^T f| (absolute when A^T f = 0)."""
    gm = fo.gm
    g = fo.apply_transpose(gm.M_TT @ fo.apply(z) - f) + rho * (gm.M_h @ z)
    scale = np.linalg.norm(fo.apply_transpose(f))
    return float(np.linalg.norm(g) / scale) if scale else float(np.linalg.norm(g))


def discrete_cost(fo: ForwardOperator, z, f, rho: float, target_sq: float = 0.0) -> float:
    """Discrete Tikhonov functional; ``target_sq`` is |u_T^delta|^2, a constant shift."""
    gm = fo.gm
    Az = fo.apply(z)
    return float(
        0.5 * Az @ (gm.M_TT @ Az) - Az @ f + 0.5 * target_sq + 0.5 * rho * z @ (gm.M_h @ z)
    )


def solve_reduced(fo: ForwardOperator, rho: float, f, cg_tol: float = 1e-15, cg_maxit: int = 2000):
    """CG on (A^T M_TT A + rho M) z = A^T f. Returns ``(z, iterations)``."""
    if not rho > 0:
        raise ConfigurationError("rho must be > 0")
    rhs = fo.apply_transpose(np.asarray(f, dtype=float))
    return cg(fo.reduced_operator(rho), rhs, tol=cg_tol, maxit=cg_maxit)


def coupled_matrix(gm: GlobalMatrices, rho: float) -> sp.csr_matrix:
    """Five-block system in the unknowns (u0, uI, uT, pI, pT)."""
    K0I, KII, KTI, KIT, KTT = gm.K_0I, gm.K_II, gm.K_TI, gm.K_IT, gm.K_TT
    return sp.bmat([
        [rho * gm.M_00, None, None, -K0I.T, None],
        [None, None, None, -KII.T, -KIT.T],
        [None, None, gm.M_TT, -KTI.T, -KTT.T],
        [K0I, KII, KTI, None, None],
        [None, KIT, KTT, None, None],
    ], format="csr")


def kkt_matrix(gm: GlobalMatrices, rho: float) -> sp.csr_matrix:
    """Seven-block system in (u0, uI, uT, z, p0, pI, pT)."""
    K0I, KII, KTI, KIT, KTT = gm.K_0I, gm.K_II, gm.K_TI, gm.K_IT, gm.K_TT
    M00, Mh, Mbar = gm.M_00, gm.M_h, gm.M_00
    return sp.bmat([
        [None, None, None, None, -M00, -K0I.T, None],
        [None, None, None, None, None, -KII.T, -KIT.T],
        [None, None, gm.M_TT, None, None, -KTI.T, -KTT.T],
        [None, None, None, rho * Mbar, Mh, None, None],
        [M00, None, None, -Mh.T, None, None, None],
        [K0I, KII, KTI, None, None, None, None],
        [None, KIT, KTT, None, None, None, None],
    ], format="csr")


def _equilibrated_solve(A: sp.csr_matrix, b, rho: float, max_refine: int = 10):
    """Sparse LU on D_r A D_c (rows, then columns, scaled to unit max norm)
    followed by iterative refinement against the unscaled matrix.

    The eliminated control block is rho M + A^T M_TT A, so pivots of size
    O(rho) are genuine; the singularity threshold is scaled down accordingly.
    A single solve loses up to ~1e-2 relative accuracy for rho = 1e-14;
    refinement recovers it.
    """
    A = A.tocsr()
    b = np.asarray(b, dtype=float)
    dr = 1.0 / abs(A).max(axis=1).toarray().ravel()
    As = sp.diags(dr) @ A
    dc = 1.0 / abs(As).max(axis=0).toarray().ravel()
    As = (As @ sp.diags(dc)).tocsr()
    try:
        F = lu_factor(As, pivot_rtol=PIVOT_RTOL * min(1.0, rho))
    except SingularMatrixError as exc:
        raise ConfigurationError(f"optimality system is singular: {exc}") from None

    x = dc * lu_solve(F, dr * b)
    steps = 0
    prev = np.inf
    while steps < max_refine:
        dx = dc * lu_solve(F, dr * (b - A @ x))
        x += dx
        steps += 1
        change = np.linalg.norm(dx) / (np.linalg.norm(x) or 1.0)
        if change <= 1e-15 or change > 0.5 * prev:
            break
        prev = change
    # normwise backward error of the row-scaled system
    Ar = sp.diags(dr) @ A
    a_inf = abs(Ar).sum(axis=1).max()
    r = dr * (b - A @ x)
    denom = a_inf * np.abs(x).max() + np.abs(dr * b).max()
    res = float(np.abs(r).max() / denom) if denom else 0.0
    if res > LU_RESIDUAL_TOL:
        raise SolverFailureError(f"optimality system residual {res:.2e} exceeds {LU_RESIDUAL_TOL:g}")
    return x, {"lu_fill": F.fill, "refinement_steps": steps, "residual": res}


def solve_coupled(gm: GlobalMatrices, rho: float, f):
    """Returns ``((u0, uI, uT, pI, pT), info)``; ``info`` holds LU fill,
    refinement steps and the final relative residual."""
    if not rho > 0:
        raise ConfigurationError("rho must be > 0")
    p = gm.partition
    n0, nI, nT = p.n0, p.nI, p.nT
    rhs = np.zeros(n0 + 2 * nI + 2 * nT)
    rhs[n0 + nI: n0 + nI + nT] = f
    x, info = _equilibrated_solve(coupled_matrix(gm, rho), rhs, rho)
    return tuple(np.split(x, np.cumsum([n0, nI, nT, nI]))), info


def solve_full_kkt(gm: GlobalMatrices, rho: float, f):
    """Returns ``((u0, uI, uT, z, p0, pI, pT), info)`` as for :func:`solve_coupled`."""
    if not rho > 0:
        raise ConfigurationError("rho must be > 0")
    p = gm.partition
    n0, nI, nT = p.n0, p.nI, p.nT
    rhs = np.zeros(3 * n0 + 2 * nI + 2 * nT)
    rhs[n0 + nI: n0 + nI + nT] = f
    x, info = _equilibrated_solve(kkt_matrix(gm, rho), rhs, rho)
    return tuple(np.split(x, np.cumsum([n0, nI, nT, n0, n0, nI]))), info


@dataclass
class Reconstruction:
    z: np.ndarray
    u: np.ndarray
    p: np.ndarray
    x0: np.ndarray
    errors: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    def as_function(self):
        """Piecewise-linear initial datum on [0, 1], zero at both ends."""
        return trace_function(self.x0, self.z)

    def nodal_profile(self):
        """(x, z) on the closed interval, Dirichlet endpoints included."""
        return np.concatenate([[0.0], self.x0, [1.0]]), np.concatenate([[0.0], self.z, [0.0]])


def trace_function(x_nodes, values):
    xs = np.concatenate([[0.0], np.asarray(x_nodes, dtype=float), [1.0]])
    vs = np.concatenate([[0.0], np.asarray(values, dtype=float), [0.0]])
    return lambda x: np.interp(x, xs, vs)


def reconstruct(mesh: SpaceTimeMesh, config: TikhonovConfig, observed, exact=None, gm=None, fo=None) -> Reconstruction:
    """Assemble, solve along ``config.path`` and measure errors.

    ``observed`` is the terminal data as a function of x; ``exact`` the true
    initial datum (optional). The spectral reference is the exact Tikhonov
    solution of the continuous problem for the same data and rho.
    """
    rho = config.rho
    gm = gm or assemble_global(mesh, DofPartition.from_mesh(mesh))
    f = terminal_load(mesh, gm.partition, observed)
    stats = {"path": config.path.value, "iterations": 0, "lu_fill": 0}

    if config.path is SolverPath.REDUCED:
        fo = fo or build_forward(gm)
        z, its = solve_reduced(fo, rho, f, config.cg_tol, config.cg_maxit)
        u0, uI, uT = fo.forward_solve(z)
        _, pI, pT = fo.adjoint_fields(gm.M_TT @ uT - f)
        stats["iterations"] = its
    elif config.path is SolverPath.COUPLED:
        (u0, uI, uT, pI, pT), info = solve_coupled(gm, rho, f)
        z = u0.copy()
        stats.update(info)
    else:
        (u0, uI, uT, z, _p0, pI, pT), info = solve_full_kkt(gm, rho, f)
        stats.update(info)

    fo = fo or build_forward(gm)
    stats["gradient_residual"] = gradient_residual(fo, z, f, rho)
    rec = Reconstruction(
        z=z,
        u=np.concatenate([u0, uI, uT]),
        p=np.concatenate([-rho * z, pI, pT]),
        x0=gm.x0,
        stats=stats,
    )
    zh = rec.as_function()
    oracle = tikhonov_solution(sine_coefficients(observed), rho, mesh.T)
    rec.errors["l2_vs_oracle"] = l2_error(zh, oracle)
    rec.errors["l2_vs_exact"] = l2_error(zh, exact) if exact is not None else math.nan
    return rec


def discrete_inf_sup(gm: GlobalMatrices, rho: float, max_dim: int = 600) -> float:
    """Smallest singular value of the coupled optimality matrix measured in
    the trial norm sqrt(|u|_X^2 + |p|_Y^2) and test norm sqrt(|q|_X^2 + |v|_Y^2).
    Dense; refuses systems larger than ``max_dim``."""
    p = gm.partition
    n0, nI, nT = p.n0, p.nI, p.nT
    dim = n0 + 2 * nI + 2 * nT
    if dim > max_dim:
        raise GuardError(f"inf-sup diagnostic limited to {max_dim} unknowns, system has {dim}")
    B = coupled_matrix(gm, rho).toarray()
    GX = norm_X_gram(gm)
    GY0 = gm.K_x.toarray()[n0:, n0:]  # Y_{0,h}: no Sigma_0 DOFs
    # columns (u, p): u in X_h, p in Y_{0,h}; rows (q, v): q in X_h, v in Y_{0,h}
    G_trial = sla.block_diag(GX, GY0)
    G_test = sla.block_diag(GX, GY0)
    Lt = np.linalg.cholesky(G_trial)
    Ls = np.linalg.cholesky(G_test)
    Bn = sla.solve_triangular(Ls, B, lower=True)
    Bn = sla.solve_triangular(Lt, Bn.T, lower=True).T
    return float(np.linalg.svd(Bn, compute_uv=False).min())
