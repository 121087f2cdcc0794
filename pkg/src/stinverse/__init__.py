"""Space-time finite element reconstruction of the initial temperature in the
1D heat equation from (noisy) terminal observations, with Tikhonov
regularization and a spectral reference solution."""

from .assembly import DofPartition, GlobalMatrices, assemble_global, continuity_constants, terminal_load
from .harness import ExperimentConfig, make_target, run_study_h, run_study_noise
from .inverse import ForwardOperator, Reconstruction, SolverPath, TikhonovConfig, build_forward, reconstruct
from .mesh import SpaceTimeMesh, Tag, generate_structured, perturb_interior, read_mesh, write_mesh
from .oracle import SineSeries, SpectralModel, l2_error, sine_coefficients, tikhonov_solution

__version__ = "0.1.0"
