"""Command line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidArgumentError, MeshError
from .harness import (
    STUDY_DELTAS,
    STUDY_NS,
    ExperimentConfig,
    export_results,
    fmt,
    make_target,
    run_study_h,
    run_study_noise,
    write_vtk,
)
from .inverse import build_forward, reconstruct, trace_function
from .assembly import assemble_global
from .mesh import read_mesh, write_mesh
from .oracle import decay_factors, evaluate_series, l2_error, sine_coefficients, tikhonov_solution

log = logging.getLogger("stinverse")

CONFIG_KEYS = {"n", "t", "rho", "delta", "path", "perturb", "seed", "out", "noise_seed", "mesh"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_").lower()
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def _floats(text) -> list:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text) -> list:
    return [int(v) for v in str(text).split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stinverse", description="Space-time FEM reconstruction of an initial temperature.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = _Parser(add_help=False)
    common.add_argument("--n", help="intervals per direction (comma list for study-h)")
    common.add_argument("--t", help="final time T")
    common.add_argument("--rho", help="Tikhonov parameter (> 0)")
    common.add_argument("--delta", help="noise amplitude (comma list for study-noise)")
    common.add_argument("--path", choices=["coupled", "reduced", "kkt"])
    common.add_argument("--perturb", help="interior vertex perturbation amplitude in [0, 0.49]")
    common.add_argument("--seed", help="perturbation seed")
    common.add_argument("--noise-seed", dest="noise_seed", help="use Gaussian nodal noise with this seed")
    common.add_argument("--mesh", help="read the mesh from an stmesh file instead of generating it")
    common.add_argument("--out", help="output directory")
    common.add_argument("--config", help="key = value configuration file")

    for name, text in (
        ("mesh", "write the (possibly perturbed) space-time mesh"),
        ("forward", "evolve sin(pi x) to t = T and compare with the exact decay"),
        ("reconstruct", "reconstruct the initial datum from u_T^delta"),
        ("study-h", "mesh refinement study"),
        ("study-noise", "noise level study"),
        ("oracle", "spectral Tikhonov solution for the manufactured data"),
    ):
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def resolve(args) -> tuple[ExperimentConfig, str | None]:
    cfg = read_config(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    study_h = args.command == "study-h"
    study_noise = args.command == "study-noise"
    try:
        ns = _ints(cfg["n"]) if "n" in cfg else list(STUDY_NS if study_h else (64,))
        deltas = _floats(cfg["delta"]) if "delta" in cfg else list(STUDY_DELTAS if study_noise else (0.0,))
        config = ExperimentConfig(
            ns=ns,
            T=float(cfg.get("t", 1.0)),
            rho=float(cfg.get("rho", 1e-14)),
            deltas=deltas,
            path=str(cfg.get("path", "coupled")),
            perturb=float(cfg.get("perturb", 0.0)),
            seed=int(cfg.get("seed", 0)),
            out=str(cfg.get("out", "out")),
            noise_seed=int(cfg["noise_seed"]) if "noise_seed" in cfg else None,
        )
    except ValueError as exc:
        # ConfigurationError is a ValueError too
        raise UsageError(str(exc)) from None
    if len(config.ns) > 1 and not study_h:
        raise UsageError("a list of N is only accepted by study-h")
    if len(config.deltas) > 1 and not study_noise:
        raise UsageError("a list of delta values is only accepted by study-noise")
    return config, cfg.get("mesh")


def _mesh(config, mesh_file):
    if mesh_file:
        return read_mesh(mesh_file)
    return config.mesh(config.ns[0])


def cmd_mesh(config, mesh_file):
    mesh = _mesh(config, mesh_file)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    write_mesh(mesh, out / "mesh.stmesh")
    write_vtk(mesh, out / "mesh.vtk")
    counts = mesh.tag_counts()
    print(f"vertices {mesh.n_vertices}  elements {mesh.n_elements}  h {mesh.h:.6g}  "
          + "  ".join(f"{t.name} {c}" for t, c in counts.items()))


def cmd_forward(config, mesh_file):
    mesh = _mesh(config, mesh_file)
    gm = assemble_global(mesh)
    fo = build_forward(gm)
    uT = fo.apply(np.sin(math.pi * gm.x0))
    decay = math.exp(-math.pi**2 * mesh.T)
    exact = lambda x: decay * np.sin(math.pi * np.asarray(x))  # noqa: E731
    err = l2_error(trace_function(gm.xT, uT), exact) / (decay / math.sqrt(2.0))
    x = np.concatenate([[0.0], gm.xT, [1.0]])
    u = np.concatenate([[0.0], uT, [0.0]])
    lines = ["x,uT,exact"] + [f"{fmt(a)},{fmt(b)},{fmt(c)}" for a, b, c in zip(x, u, exact(x))]
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "forward.csv").write_text("\n".join(lines) + "\n")
    print(f"relative L2 error of u_h(T): {err:.6e}")


def cmd_reconstruct(config, mesh_file):
    mesh = _mesh(config, mesh_file)
    target = make_target(config.deltas[0], mesh.T, config.noise_seed)
    rec = reconstruct(mesh, config.tikhonov(config.deltas[0]), target, exact=target.exact)
    export_results(rec, mesh, config.out, "csv", exact=target.exact)
    export_results(rec, mesh, config.out, "vtk")
    print(f"l2_vs_exact {rec.errors['l2_vs_exact']:.6e}  l2_vs_oracle {rec.errors['l2_vs_oracle']:.6e}  "
          f"gradient_residual {rec.stats['gradient_residual']:.2e}")


def _print_study(result):
    print(f"{result.kind:>12} {'l2_vs_exact':>14} {'l2_vs_oracle':>14} {'iterations':>10}")
    for r in result.rows:
        print(f"{r.param:12.4g} {r.l2_vs_exact:14.6e} {r.l2_vs_oracle:14.6e} {r.iterations:10d}")


def cmd_study_h(config, mesh_file):
    if mesh_file:
        raise UsageError("study-h generates its own meshes; --mesh is not accepted")
    result = run_study_h(config)
    export_results(result, None, config.out, "csv", name="study_h")
    _print_study(result)


def cmd_study_noise(config, mesh_file):
    if mesh_file:
        raise UsageError("study-noise generates its own mesh; --mesh is not accepted")
    result = run_study_noise(config)
    export_results(result, None, config.out, "csv", name="study_noise")
    _print_study(result)


def cmd_oracle(config, mesh_file):
    target = make_target(config.deltas[0], config.T, config.noise_seed)
    sol = tikhonov_solution(sine_coefficients(target), config.rho, config.T)
    s1 = decay_factors(1, config.T)[0]
    x = np.linspace(0.0, 1.0, config.ns[0] + 1)
    lines = ["x,z,exact"] + [f"{fmt(a)},{fmt(b)},{fmt(c)}" for a, b, c in zip(x, evaluate_series(sol, x), target.exact(x))]
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "oracle.csv").write_text("\n".join(lines) + "\n")
    print(f"mode-1 filter sigma^2/(sigma^2+rho) = {s1 * s1 / (s1 * s1 + config.rho):.10f}  "
          f"l2_vs_exact {l2_error(sol, target.exact):.6e}")


COMMANDS = {
    "mesh": cmd_mesh,
    "forward": cmd_forward,
    "reconstruct": cmd_reconstruct,
    "study-h": cmd_study_h,
    "study-noise": cmd_study_noise,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        config, mesh_file = resolve(args)
        COMMANDS[args.command](config, mesh_file)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ConfigurationError, InvalidArgumentError, MeshError) as exc:
        print(f"stinverse: error: {exc}", file=sys.stderr)
        return 1
    except ArithmeticError as exc:
        print(f"stinverse: numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"stinverse: {exc}", file=sys.stderr)
        return 1
    return 0


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
