"""Simplicial meshes of the space-time rectangle (0, 1) x (0, T).

Vertices are stored as ``(x, t)`` rows; everything downstream treats the last
column as time, so a higher-dimensional spatial domain only widens the rows.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, MeshError, MeshParseError, PerturbationError

COORD_TOL = 1e-12


class Tag(IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    SIGMA0 = 2
    SIGMAT = 3


def classify_vertices(vertices: np.ndarray, T: float) -> np.ndarray:
    """Boundary tags; the lateral boundary wins at the four corners."""
    x, t = vertices[:, 0], vertices[:, 1]
    tags = np.full(len(vertices), Tag.INTERIOR, dtype=np.int8)
    tags[np.abs(t) <= COORD_TOL] = Tag.SIGMA0
    tags[np.abs(t - T) <= COORD_TOL] = Tag.SIGMAT
    tags[(np.abs(x) <= COORD_TOL) | (np.abs(x - 1.0) <= COORD_TOL)] = Tag.DIRICHLET
    return tags


def signed_areas(vertices: np.ndarray, elements: np.ndarray) -> np.ndarray:
    p0, p1, p2 = (vertices[elements[:, k]] for k in range(3))
    d1, d2 = p1 - p0, p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1])


def _side_codes(vertices, T):
    # bitmask of the rectangle sides a vertex lies on: x=0, x=1, t=0, t=T
    x, t = vertices[:, 0], vertices[:, 1]
    return (
        (np.abs(x) <= COORD_TOL) * 1
        | (np.abs(x - 1.0) <= COORD_TOL) * 2
        | (np.abs(t) <= COORD_TOL) * 4
        | (np.abs(t - T) <= COORD_TOL) * 8
    )


def check_mesh(vertices, elements, T):
    """Raise :class:`MeshError` unless the mesh is a valid conforming mesh of Q."""
    nv = len(vertices)
    if elements.ndim != 2 or elements.shape[1] != 3:
        raise MeshError("elements must be vertex-index triples")
    if elements.size and (elements.min() < 0 or elements.max() >= nv):
        raise MeshError("element references a nonexistent vertex")
    if np.any(vertices[:, 0] < -COORD_TOL) or np.any(vertices[:, 0] > 1 + COORD_TOL):
        raise MeshError("x coordinate outside [0, 1]")
    if np.any(vertices[:, 1] < -COORD_TOL) or np.any(vertices[:, 1] > T + COORD_TOL):
        raise MeshError("t coordinate outside [0, T]")
    areas = signed_areas(vertices, elements)
    if np.any(areas <= 0.0):
        bad = int(np.flatnonzero(areas <= 0.0)[0])
        raise MeshError(f"element {bad} is not positively oriented")

    edges = np.sort(elements[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("an edge is shared by more than two elements")
    sides = _side_codes(vertices, T)
    on_boundary = (sides[uniq[:, 0]] & sides[uniq[:, 1]]) != 0
    if np.any(on_boundary & (counts != 1)) or np.any(~on_boundary & (counts != 2)):
        raise MeshError("mesh is not conforming (boundary/interior edge counts)")
    if abs(areas.sum() - T) > 1e-12 * T:
        raise MeshError(f"element areas sum to {areas.sum()!r}, expected {T!r}")


@dataclass(frozen=True, eq=False)
class SpaceTimeMesh:
    vertices: np.ndarray
    elements: np.ndarray
    T: float
    boundary_tags: np.ndarray

    def __post_init__(self):
        for arr in (self.vertices, self.elements, self.boundary_tags):
            arr.flags.writeable = False

    @classmethod
    def from_arrays(cls, vertices, elements, T) -> "SpaceTimeMesh":
        vertices = np.array(vertices, dtype=float)
        elements = np.array(elements, dtype=np.int64).reshape(-1, 3)
        T = float(T)
        if not T > 0:
            raise InvalidArgumentError("T must be positive")
        check_mesh(vertices, elements, T)
        return cls(vertices, elements, T, classify_vertices(vertices, T))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def h(self) -> float:
        """Largest edge length."""
        e = self.elements
        p = self.vertices
        lens = [np.linalg.norm(p[e[:, a]] - p[e[:, b]], axis=1) for a, b in ((0, 1), (1, 2), (2, 0))]
        return float(np.max(lens))

    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.elements)

    def tag_counts(self) -> dict:
        return {tag: int(np.count_nonzero(self.boundary_tags == tag)) for tag in Tag}

    def same_as(self, other: "SpaceTimeMesh") -> bool:
        return (
            self.T == other.T
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.elements, other.elements)
            and np.array_equal(self.boundary_tags, other.boundary_tags)
        )


def generate_structured(N: int, T: float = 1.0) -> SpaceTimeMesh:
    """Tensor grid with ``N`` intervals per direction, cells cut along the rising diagonal."""
    if int(N) != N or N < 2:
        raise InvalidArgumentError(f"N must be an integer >= 2, got {N!r}")
    if not T > 0:
        raise InvalidArgumentError("T must be positive")
    N = int(N)
    i, j = np.meshgrid(np.arange(N + 1), np.arange(N + 1))
    vertices = np.column_stack([i.ravel() / N, j.ravel() * T / N])
    # exact endpoints, independent of rounding in j*T/N
    vertices[j.ravel() == N, 1] = T

    ci, cj = np.meshgrid(np.arange(N), np.arange(N))
    a = (cj * (N + 1) + ci).ravel()
    b, c, d = a + 1, a + N + 2, a + N + 1
    elements = np.empty((2 * N * N, 3), dtype=np.int64)
    elements[0::2] = np.column_stack([a, b, c])
    elements[1::2] = np.column_stack([a, c, d])
    return SpaceTimeMesh.from_arrays(vertices, elements, T)


def _min_incident_edge(mesh):
    e = mesh.elements
    p = mesh.vertices
    out = np.full(mesh.n_vertices, np.inf)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        length = np.linalg.norm(p[e[:, a]] - p[e[:, b]], axis=1)
        np.minimum.at(out, e[:, a], length)
        np.minimum.at(out, e[:, b], length)
    return out


def perturb_interior(mesh: SpaceTimeMesh, amplitude: float, seed: int, max_retries: int = 10) -> SpaceTimeMesh:
    """Randomly displace interior vertices by at most ``amplitude`` times the
    shortest incident edge. The offsets are drawn once from ``seed``; on an
    orientation failure the same offsets are retried at half the amplitude."""
    if not 0.0 <= amplitude <= 0.49:
        raise InvalidArgumentError("amplitude must lie in [0, 0.49]")
    if amplitude == 0.0:
        return mesh
    rng = np.random.default_rng(seed)
    interior = np.flatnonzero(mesh.boundary_tags == Tag.INTERIOR)
    radius = rng.uniform(0.0, 1.0, len(interior))
    angle = rng.uniform(0.0, 2 * np.pi, len(interior))
    unit = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    scale = _min_incident_edge(mesh)[interior][:, None]

    amp = amplitude
    for _ in range(max_retries + 1):
        vertices = mesh.vertices.copy()
        vertices[interior] += amp * scale * unit
        try:
            return SpaceTimeMesh.from_arrays(vertices, mesh.elements, mesh.T)
        except MeshError:
            amp *= 0.5
    raise PerturbationError(f"no valid perturbation after {max_retries} retries")


@dataclass(frozen=True)
class ElementGeometry:
    area: float
    basis_gradients: np.ndarray  # (3, 2): rows (d/dx phi_i, d/dt phi_i)


def _geometry_arrays(vertices, elements):
    p0, p1, p2 = (vertices[elements[:, k]] for k in range(3))
    d1, d2 = p1 - p0, p2 - p0
    det = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]
    # rows of J^{-1}, J = [d1 d2]
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    grads = np.stack([-g1 - g2, g1, g2], axis=1)
    return 0.5 * np.abs(det), grads


def all_element_geometry(mesh: SpaceTimeMesh):
    """Areas ``(ne,)`` and basis gradients ``(ne, 3, 2)`` for every element."""
    return _geometry_arrays(mesh.vertices, mesh.elements)


def triangle_geometry(points) -> ElementGeometry:
    points = np.asarray(points, dtype=float)
    area, grads = _geometry_arrays(points, np.array([[0, 1, 2]]))
    return ElementGeometry(float(area[0]), grads[0])


def element_geometry(mesh: SpaceTimeMesh, e: int) -> ElementGeometry:
    if not 0 <= e < mesh.n_elements:
        raise IndexError(f"element index {e} out of range [0, {mesh.n_elements})")
    return triangle_geometry(mesh.vertices[mesh.elements[e]])


# --- text format -----------------------------------------------------------

def write_mesh(mesh: SpaceTimeMesh, path) -> None:
    lines = [f"stmesh 1 {mesh.n_vertices} {mesh.n_elements} {mesh.T:.17g}"]
    lines += [f"{x:.17g} {t:.17g} {int(tag)}" for (x, t), tag in zip(mesh.vertices, mesh.boundary_tags)]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.elements]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> SpaceTimeMesh:
    """Parse the ``stmesh 1`` text format.

    Negatively oriented triangles are flipped and reported once through
    :func:`warnings.warn`; anything else malformed raises
    :class:`MeshParseError` with the offending line number.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MeshParseError("empty file", 1)
    head = lines[0].split()
    if len(head) != 5 or head[0] != "stmesh" or head[1] != "1":
        raise MeshParseError("expected header 'stmesh 1 <nv> <ne> <T>'", 1)
    try:
        nv, ne, T = int(head[2]), int(head[3]), float(head[4])
    except ValueError as exc:
        raise MeshParseError(f"bad header: {exc}", 1) from None
    if nv < 3 or ne < 1 or not T > 0:
        raise MeshParseError("header counts/T out of range", 1)
    if len(lines) < 1 + nv + ne:
        raise MeshParseError(f"expected {nv} vertex and {ne} element lines", len(lines))

    vertices = np.empty((nv, 2))
    tags = np.empty(nv, dtype=np.int8)
    for k in range(nv):
        lineno = k + 2
        parts = lines[k + 1].split()
        if len(parts) != 3:
            raise MeshParseError("expected 'x t tag'", lineno)
        try:
            vertices[k] = float(parts[0]), float(parts[1])
            tags[k] = int(parts[2])
        except ValueError as exc:
            raise MeshParseError(str(exc), lineno) from None
        if tags[k] not in (0, 1, 2, 3):
            raise MeshParseError(f"unknown tag {tags[k]}", lineno)

    elements = np.empty((ne, 3), dtype=np.int64)
    for k in range(ne):
        lineno = k + nv + 2
        parts = lines[k + nv + 1].split()
        if len(parts) != 3:
            raise MeshParseError("expected 'i j k'", lineno)
        try:
            idx = [int(p) for p in parts]
        except ValueError as exc:
            raise MeshParseError(str(exc), lineno) from None
        for v in idx:
            if not 0 <= v < nv:
                raise MeshParseError(f"vertex index {v} out of range for {nv} vertices", lineno)
        elements[k] = idx

    for line in lines[1 + nv + ne:]:
        if line.strip():
            raise MeshParseError("trailing content", lines.index(line) + 1)

    expected = classify_vertices(vertices, T)
    wrong = np.flatnonzero(expected != tags)
    if len(wrong):
        raise MeshParseError(f"tag {tags[wrong[0]]} does not match vertex position", int(wrong[0]) + 2)

    areas = signed_areas(vertices, elements)
    flipped = areas < 0
    n_flipped = int(np.count_nonzero(flipped))
    if n_flipped:
        elements[flipped] = elements[flipped][:, [0, 2, 1]]
        warnings.warn(f"{n_flipped} element(s) reoriented to positive orientation", stacklevel=2)
    try:
        return SpaceTimeMesh.from_arrays(vertices, elements, T)
    except MeshError as exc:
        raise MeshParseError(f"invalid mesh: {exc}") from None
