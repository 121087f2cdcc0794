"""Manufactured data, mesh/noise studies and file export."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import DofPartition, assemble_global
from .errors import ConfigurationError
from .inverse import Reconstruction, SolverPath, TikhonovConfig, build_forward, reconstruct
from .mesh import SpaceTimeMesh, generate_structured, perturb_interior

STUDY_DELTAS = (0.5, 0.4, 0.3, 0.2, 1e-1, 1e-3, 1e-5)
STUDY_NS = (16, 32, 64)
DEFAULT_RHO = 1e-14

STUDY_HEADER = "param,l2_vs_exact,l2_vs_oracle,iterations"


def fmt(v) -> str:
    return f"{float(v):.17g}"


class ManufacturedTarget:
    """u_T^delta(x) = exp(-pi^2 T) sin(pi x) + delta sin(10 pi x); the exact
    initial datum is sin(pi x).

    With ``noise_seed`` the sin(10 pi x) term is replaced by delta times a
    piecewise-linear Gaussian field on 101 equispaced nodes (zero at the ends).
    """

    def __init__(self, delta: float, T: float = 1.0, noise_seed: int | None = None):
        if delta < 0:
            raise ConfigurationError("delta must be >= 0")
        self.delta = float(delta)
        self.T = float(T)
        self.noise_seed = noise_seed
        self._noise_nodes = None
        if noise_seed is not None:
            vals = np.random.default_rng(noise_seed).standard_normal(101)
            vals[[0, -1]] = 0.0
            self._noise_nodes = vals

    def clean(self, x):
        return math.exp(-math.pi**2 * self.T) * np.sin(math.pi * np.asarray(x, dtype=float))

    def noise(self, x):
        x = np.asarray(x, dtype=float)
        if self._noise_nodes is None:
            return np.sin(10 * math.pi * x)
        return np.interp(x, np.linspace(0.0, 1.0, 101), self._noise_nodes)

    def __call__(self, x):
        return self.clean(x) + self.delta * self.noise(x)

    @staticmethod
    def exact(x):
        return np.sin(math.pi * np.asarray(x, dtype=float))


def make_target(delta: float, T: float = 1.0, noise_seed: int | None = None) -> ManufacturedTarget:
    return ManufacturedTarget(delta, T, noise_seed)


@dataclass
class ExperimentConfig:
    ns: tuple = (64,)
    T: float = 1.0
    rho: float = DEFAULT_RHO
    deltas: tuple = (0.0,)
    path: str = "coupled"
    perturb: float = 0.0
    seed: int = 0
    out: str = "out"
    noise_seed: int | None = None

    def __post_init__(self):
        self.ns = tuple(int(n) for n in np.atleast_1d(self.ns))
        self.deltas = tuple(float(d) for d in np.atleast_1d(self.deltas))
        if not self.ns or not self.deltas:
            raise ConfigurationError("N and delta lists must be non-empty")
        if any(n < 2 for n in self.ns):
            raise ConfigurationError("N must be >= 2")
        if not self.T > 0:
            raise ConfigurationError("T must be > 0")
        if not self.rho > 0:
            raise ConfigurationError(f"rho must be > 0, got {self.rho!r}")
        if any(d < 0 for d in self.deltas):
            raise ConfigurationError("delta must be >= 0")
        if not 0.0 <= self.perturb <= 0.49:
            raise ConfigurationError("perturb amplitude must lie in [0, 0.49]")
        try:
            SolverPath(self.path)
        except ValueError:
            raise ConfigurationError(f"unknown path {self.path!r}; use coupled, reduced or kkt") from None

    def tikhonov(self, delta: float = 0.0) -> TikhonovConfig:
        return TikhonovConfig(rho=self.rho, path=SolverPath(self.path), delta=delta)

    def mesh(self, N: int) -> SpaceTimeMesh:
        m = generate_structured(N, self.T)
        return perturb_interior(m, self.perturb, self.seed) if self.perturb else m


@dataclass
class StudyRow:
    param: float
    l2_vs_exact: float
    l2_vs_oracle: float
    iterations: int
    stats: dict = field(default_factory=dict)


@dataclass
class StudyResult:
    kind: str
    rows: list

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self) -> str:
        lines = [STUDY_HEADER]
        lines += [f"{fmt(r.param)},{fmt(r.l2_vs_exact)},{fmt(r.l2_vs_oracle)},{int(r.iterations)}" for r in self.rows]
        return "\n".join(lines) + "\n"


def _row(param, rec: Reconstruction) -> StudyRow:
    return StudyRow(param, rec.errors["l2_vs_exact"], rec.errors["l2_vs_oracle"], rec.stats["iterations"], rec.stats)


def run_study_h(config: ExperimentConfig) -> StudyResult:
    """One reconstruction per N at the first delta; param = h = 1/N."""
    delta = config.deltas[0]
    target = make_target(delta, config.T, config.noise_seed)
    rows = []
    for N in config.ns:
        rec = reconstruct(config.mesh(N), config.tikhonov(delta), target, exact=target.exact)
        rows.append(_row(1.0 / N, rec))
    return StudyResult("h", rows)


def run_study_noise(config: ExperimentConfig) -> StudyResult:
    """One reconstruction per delta on the first N; assembly is shared."""
    mesh = config.mesh(config.ns[0])
    gm = assemble_global(mesh, DofPartition.from_mesh(mesh))
    fo = build_forward(gm) if SolverPath(config.path) is SolverPath.REDUCED else None
    rows = []
    for delta in config.deltas:
        target = make_target(delta, config.T, config.noise_seed)
        rec = reconstruct(mesh, config.tikhonov(delta), target, exact=target.exact, gm=gm, fo=fo)
        rows.append(_row(delta, rec))
    return StudyResult("delta", rows)


# --- export -----------------------------------------------------------------

def _write(path, text):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def write_study_csv(result: StudyResult, path) -> Path:
    return _write(path, result.to_csv())


def reconstruction_csv(rec: Reconstruction, exact=None) -> str:
    x, z = rec.nodal_profile()
    ex = exact(x) if exact is not None else np.full_like(x, np.nan)
    lines = ["x,z,exact"] + [f"{fmt(a)},{fmt(b)},{fmt(c)}" for a, b, c in zip(x, z, ex)]
    return "\n".join(lines) + "\n"


def write_reconstruction_csv(rec: Reconstruction, path, exact=None) -> Path:
    return _write(path, reconstruction_csv(rec, exact))


def vertex_field(mesh: SpaceTimeMesh, dof_values, partition: DofPartition | None = None) -> np.ndarray:
    """Scatter a full DOF vector onto all vertices (Dirichlet vertices get 0)."""
    partition = partition or DofPartition.from_mesh(mesh)
    out = np.zeros(mesh.n_vertices)
    out[partition.dofs] = dof_values
    return out


def vtk_text(mesh: SpaceTimeMesh, point_data: dict | None = None) -> str:
    """Legacy ASCII VTK unstructured grid; time is written as the y coordinate."""
    lines = [
        "# vtk DataFile Version 3.0",
        "space-time mesh",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    lines += [f"{fmt(x)} {fmt(t)} 0" for x, t in mesh.vertices]
    lines.append(f"CELLS {mesh.n_elements} {4 * mesh.n_elements}")
    lines += [f"3 {i} {j} {k}" for i, j, k in mesh.elements]
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines += ["5"] * mesh.n_elements
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, values in point_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [fmt(v) for v in values]
    return "\n".join(lines) + "\n"


def write_vtk(mesh: SpaceTimeMesh, path, point_data: dict | None = None) -> Path:
    return _write(path, vtk_text(mesh, point_data))


def export_results(obj, mesh: SpaceTimeMesh | None, out_dir, fmt_: str = "csv", name: str | None = None, exact=None):
    """Write a study or reconstruction as CSV, or a reconstruction's fields as VTK."""
    out_dir = Path(out_dir)
    fmt_ = fmt_.lower()
    if isinstance(obj, StudyResult):
        if fmt_ != "csv":
            raise ConfigurationError("studies export to CSV only")
        return write_study_csv(obj, out_dir / f"{name or 'study_' + obj.kind}.csv")
    if fmt_ == "csv":
        return write_reconstruction_csv(obj, out_dir / f"{name or 'reconstruction'}.csv", exact)
    if fmt_ == "vtk":
        if mesh is None:
            raise ConfigurationError("VTK export needs the mesh")
        data = {"u": vertex_field(mesh, obj.u), "p": vertex_field(mesh, obj.p)}
        return write_vtk(mesh, out_dir / f"{name or 'reconstruction'}.vtk", data)
    raise ConfigurationError(f"unknown export format {fmt_!r}")
