"""P1 space-time assembly of the heat operator and the trace mass matrices.

Row index = test function, column index = trial function throughout. The
non-Dirichlet DOFs are numbered block-wise as ``[Sigma_0, interior, Sigma_T]``;
every "full" DOF vector in the package uses that layout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError, SolverFailureError, SingularMatrixError
from .mesh import COORD_TOL, ElementGeometry, SpaceTimeMesh, Tag, all_element_geometry
from .solvers import lu_factor, lu_solve

# 5-point Gauss-Legendre on [0, 1]
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)
GAUSS5_NODES = 0.5 * (_GL_NODES + 1.0)
GAUSS5_WEIGHTS = 0.5 * _GL_WEIGHTS

_BLOCK_OF_TAG = {Tag.SIGMA0: 0, Tag.INTERIOR: 1, Tag.SIGMAT: 2}


@dataclass(frozen=True, eq=False)
class DofPartition:
    """Vertex -> (block, local index) maps; block 0 = Sigma_0, 1 = interior,
    2 = Sigma_T, -1 = Dirichlet (no DOF)."""

    block: np.ndarray
    local: np.ndarray
    idx0: np.ndarray
    idxI: np.ndarray
    idxT: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: SpaceTimeMesh) -> "DofPartition":
        tags = mesh.boundary_tags
        x = mesh.vertices[:, 0]
        # trace blocks ordered left to right, interior by vertex index
        idx0 = np.flatnonzero(tags == Tag.SIGMA0)
        idx0 = idx0[np.argsort(x[idx0], kind="stable")]
        idxT = np.flatnonzero(tags == Tag.SIGMAT)
        idxT = idxT[np.argsort(x[idxT], kind="stable")]
        idxI = np.flatnonzero(tags == Tag.INTERIOR)
        block = np.full(mesh.n_vertices, -1, dtype=np.int8)
        local = np.full(mesh.n_vertices, -1, dtype=np.int64)
        for b, idx in enumerate((idx0, idxI, idxT)):
            block[idx] = b
            local[idx] = np.arange(len(idx))
        return cls(block, local, idx0, idxI, idxT)

    @property
    def n0(self) -> int:
        return len(self.idx0)

    @property
    def nI(self) -> int:
        return len(self.idxI)

    @property
    def nT(self) -> int:
        return len(self.idxT)

    @property
    def dofs(self) -> np.ndarray:
        """Vertex indices of all DOFs in the ``[0, I, T]`` layout."""
        return np.concatenate([self.idx0, self.idxI, self.idxT])

    @property
    def n(self) -> int:
        return self.n0 + self.nI + self.nT

    def split(self, u):
        """Cut a full DOF vector into ``(u0, uI, uT)``."""
        u = np.asarray(u)
        if u.shape[0] != self.n:
            raise InvalidArgumentError(f"expected a vector of length {self.n}, got {u.shape[0]}")
        return u[: self.n0], u[self.n0: self.n0 + self.nI], u[self.n0 + self.nI:]


def element_matrix(geom: ElementGeometry) -> np.ndarray:
    """Local matrix of b(u, v) = int (dt u) v + (dx u)(dx v); entry (i, j) pairs test i with trial j."""
    g = geom.basis_gradients
    return geom.area * (np.outer(g[:, 0], g[:, 0]) + np.tile(g[:, 1], (3, 1)) / 3.0)


def _assemble_vertex_matrices(mesh):
    """Spatial-stiffness and time-derivative parts of b over all vertices."""
    area, grads = all_element_geometry(mesh)
    gx, gt = grads[:, :, 0], grads[:, :, 1]
    kx = area[:, None, None] * gx[:, :, None] * gx[:, None, :]
    ct = np.broadcast_to((area[:, None] * gt / 3.0)[:, None, :], kx.shape)
    rows = np.repeat(mesh.elements, 3, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 3)).ravel()
    nv = mesh.n_vertices
    Kx = sp.csr_matrix((kx.ravel(), (rows, cols)), shape=(nv, nv))
    Ct = sp.csr_matrix((np.ascontiguousarray(ct).ravel(), (rows, cols)), shape=(nv, nv))
    Kx.sum_duplicates()
    Ct.sum_duplicates()
    return Kx, Ct


def full_b_matrix(mesh: SpaceTimeMesh) -> sp.csr_matrix:
    """The b-form matrix over every vertex, Dirichlet ones included."""
    Kx, Ct = _assemble_vertex_matrices(mesh)
    return (Kx + Ct).tocsr()


def trace_edges(mesh: SpaceTimeMesh, t_value: float) -> np.ndarray:
    """Mesh edges lying on the line t = t_value, as (left, right) vertex pairs."""
    e = mesh.elements
    t = mesh.vertices[:, 1]
    on = np.abs(t - t_value) <= COORD_TOL
    pairs = []
    for a, b in ((0, 1), (1, 2), (2, 0)):
        sel = on[e[:, a]] & on[e[:, b]]
        pairs.append(e[sel][:, [a, b]])
    edges = np.concatenate(pairs)
    x = mesh.vertices[:, 0]
    swap = x[edges[:, 0]] > x[edges[:, 1]]
    edges[swap] = edges[swap][:, ::-1]
    return edges[np.argsort(x[edges[:, 0]], kind="stable")]


def _trace_mass(mesh, edges, idx_block, partition):
    x = mesh.vertices[:, 0]
    L = x[edges[:, 1]] - x[edges[:, 0]]
    loc = partition.local
    rows, cols, vals = [], [], []
    for a, b, w in ((0, 0, 2), (0, 1, 1), (1, 0, 1), (1, 1, 2)):
        va, vb = edges[:, a], edges[:, b]
        keep = (partition.block[va] >= 0) & (partition.block[vb] >= 0)
        rows.append(loc[va[keep]])
        cols.append(loc[vb[keep]])
        vals.append(w * L[keep] / 6.0)
    n = len(idx_block)
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    M.sum_duplicates()
    return M


@dataclass(eq=False)
class GlobalMatrices:
    mesh: SpaceTimeMesh
    partition: DofPartition
    K_0I: sp.csr_matrix
    K_II: sp.csr_matrix
    K_TI: sp.csr_matrix
    K_IT: sp.csr_matrix
    K_TT: sp.csr_matrix
    M_00: sp.csr_matrix
    M_TT: sp.csr_matrix
    M_h: sp.csr_matrix
    K_x: sp.csr_matrix
    C_t: sp.csr_matrix

    @cached_property
    def K_x_factor(self):
        try:
            return lu_factor(self.K_x)
        except SingularMatrixError as exc:
            raise SolverFailureError(f"spatial stiffness is singular: {exc}") from None

    @property
    def b_matrix(self) -> sp.csr_matrix:
        """b over all non-Dirichlet DOFs (test rows, trial columns)."""
        return (self.K_x + self.C_t).tocsr()

    @property
    def x0(self) -> np.ndarray:
        return self.mesh.vertices[self.partition.idx0, 0]

    @property
    def xT(self) -> np.ndarray:
        return self.mesh.vertices[self.partition.idxT, 0]


def assemble_global(mesh: SpaceTimeMesh, partition: DofPartition | None = None) -> GlobalMatrices:
    if partition is None:
        partition = DofPartition.from_mesh(mesh)
    if min(partition.n0, partition.nI, partition.nT) == 0:
        raise InvalidArgumentError("mesh too coarse: a DOF block is empty")
    Kx_all, Ct_all = _assemble_vertex_matrices(mesh)
    K_all = (Kx_all + Ct_all).tocsr()
    i0, iI, iT = partition.idx0, partition.idxI, partition.idxT
    if K_all[iT][:, i0].count_nonzero():
        raise InvalidArgumentError("an element touches both Sigma_0 and Sigma_T; refine in time")
    dofs = partition.dofs
    M00 = _trace_mass(mesh, trace_edges(mesh, 0.0), i0, partition)
    return GlobalMatrices(
        mesh=mesh,
        partition=partition,
        K_0I=K_all[iI][:, i0],
        K_II=K_all[iI][:, iI],
        K_TI=K_all[iI][:, iT],
        K_IT=K_all[iT][:, iI],
        K_TT=K_all[iT][:, iT],
        M_00=M00,
        M_TT=_trace_mass(mesh, trace_edges(mesh, mesh.T), iT, partition),
        M_h=M00.copy(),
        K_x=Kx_all[dofs][:, dofs].tocsr(),
        C_t=Ct_all[dofs][:, dofs].tocsr(),
    )


def terminal_load(mesh: SpaceTimeMesh, partition: DofPartition, g) -> np.ndarray:
    """f_i = int_0^1 g(x) phi_i(x, T) dx with 5-point Gauss per trace segment."""
    edges = trace_edges(mesh, mesh.T)
    x = mesh.vertices[:, 0]
    xa, xb = x[edges[:, 0]], x[edges[:, 1]]
    L = xb - xa
    pts = xa[:, None] + L[:, None] * GAUSS5_NODES[None, :]
    gw = np.asarray(g(pts.ravel()), dtype=float).reshape(pts.shape) * GAUSS5_WEIGHTS * L[:, None]
    f = np.zeros(partition.nT)
    for end, shape in ((0, 1.0 - GAUSS5_NODES), (1, GAUSS5_NODES)):
        v = edges[:, end]
        keep = partition.block[v] == 2
        np.add.at(f, partition.local[v[keep]], (gw[keep] * shape).sum(axis=1))
    return f


def norm_Y(gm: GlobalMatrices, u) -> float:
    u = np.asarray(u, dtype=float)
    return math.sqrt(max(float(u @ (gm.K_x @ u)), 0.0))


def x_dual_part(gm: GlobalMatrices, u) -> np.ndarray:
    """w solving K_x w = C_t u, the discrete representer of dt u in Y."""
    return lu_solve(gm.K_x_factor, gm.C_t @ np.asarray(u, dtype=float))


def norm_X(gm: GlobalMatrices, u) -> float:
    u = np.asarray(u, dtype=float)
    w = x_dual_part(gm, u)
    return math.sqrt(max(float(w @ (gm.K_x @ w) + u @ (gm.K_x @ u)), 0.0))


def norm_X_gram(gm: GlobalMatrices) -> np.ndarray:
    """Dense Gram matrix of the discrete X norm; small meshes only."""
    Kx = gm.K_x.toarray()
    Ct = gm.C_t.toarray()
    W = lu_solve(gm.K_x_factor, Ct)
    return Kx + Ct.T @ W


def trace_norm(gm: GlobalMatrices, u, which: str) -> float:
    u0, _, uT = gm.partition.split(np.asarray(u, dtype=float))
    if which == "0":
        return math.sqrt(float(u0 @ (gm.M_00 @ u0)))
    if which == "T":
        return math.sqrt(float(uT @ (gm.M_TT @ uT)))
    raise InvalidArgumentError("which must be '0' or 'T'")


def bilinear_b(gm: GlobalMatrices, u, v) -> float:
    return float(np.asarray(v) @ (gm.b_matrix @ np.asarray(u)))


def bilinear_B(gm: GlobalMatrices, u, p, v, q, rho: float) -> float:
    """b(u, v) - b(q, p) + <u(T), q(T)> + rho <u(0), q(0)>, all fields full DOF vectors."""
    n = gm.partition.n
    for name, arr in (("u", u), ("p", p), ("v", v), ("q", q)):
        if np.shape(arr) != (n,):
            raise InvalidArgumentError(f"{name} must have length {n}, got shape {np.shape(arr)}")
    u0, _, uT = gm.partition.split(u)
    q0, _, qT = gm.partition.split(q)
    return (
        bilinear_b(gm, u, v)
        - bilinear_b(gm, q, p)
        + float(qT @ (gm.M_TT @ uT))
        + rho * float(q0 @ (gm.M_00 @ u0))
    )


@dataclass(frozen=True)
class ContinuityConstants:
    c_F: float
    mu: float
    rho: float
    bound_b: float
    bound_B: float


def trace_constant(T: float, c_F: float = 1.0 / math.pi) -> float:
    a2 = (c_F / T) ** 2
    return math.sqrt(1.0 + 0.5 * a2 + math.sqrt(0.25 * a2 * a2 + a2))


def continuity_constants(T: float, rho: float) -> ContinuityConstants:
    if not T > 0:
        raise InvalidArgumentError("T must be positive")
    c_F = 1.0 / math.pi
    mu = trace_constant(T, c_F)
    return ContinuityConstants(c_F, mu, rho, math.sqrt(2.0), 2.0 * (1.0 + rho) * mu * mu)
