import math

import numpy as np
import pytest

from stinverse import cli
from stinverse.errors import ConfigurationError, SolverFailureError
from stinverse.harness import (
    STUDY_DELTAS,
    STUDY_HEADER,
    ExperimentConfig,
    export_results,
    make_target,
    run_study_h,
    run_study_noise,
    vtk_text,
)
from stinverse.inverse import TikhonovConfig, reconstruct
from stinverse.mesh import generate_structured
from stinverse.oracle import l2_error

SIGMA1 = math.exp(-math.pi**2)


@pytest.fixture(scope="module")
def study_h():
    return run_study_h(ExperimentConfig(ns=(16, 32, 64)))


@pytest.fixture(scope="module")
def study_noise():
    return run_study_noise(ExperimentConfig(ns=(64,), deltas=STUDY_DELTAS + (0.0,)))


def test_target_values():
    assert make_target(0.0)(0.5) == pytest.approx(5.17231862038123e-5, rel=1e-13)
    x = 0.05
    expected = SIGMA1 * math.sin(0.05 * math.pi) + 1e-5 * math.sin(0.5 * math.pi)
    assert make_target(1e-5)(x) == pytest.approx(expected, rel=1e-14)
    assert make_target(0.0).exact(0.5) == 1.0


@pytest.mark.parametrize("delta", [1e-5, 0.1, 0.5])
def test_noise_norm(delta):
    t = make_target(delta)
    assert l2_error(t, t.clean) == pytest.approx(delta / math.sqrt(2), rel=1e-12)


def test_target_validation():
    with pytest.raises(ConfigurationError):
        make_target(-1.0)
    seeded = make_target(0.1, noise_seed=3)
    assert seeded.noise(0.0) == 0.0 and seeded.noise(1.0) == 0.0
    assert np.array_equal(seeded(np.linspace(0, 1, 7)), make_target(0.1, noise_seed=3)(np.linspace(0, 1, 7)))


@pytest.mark.parametrize("kwargs", [{"rho": 0.0}, {"ns": (1,)}, {"T": -1.0}, {"deltas": (-0.1,)},
                                    {"perturb": 0.6}, {"path": "gmres"}])
def test_experiment_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        ExperimentConfig(**kwargs)


def test_study_h(study_h):
    err = study_h.column("l2_vs_exact")
    assert np.all(np.diff(err) < 0)
    assert np.allclose(study_h.column("param"), [1 / 16, 1 / 32, 1 / 64])
    # relative to the oracle Tikhonov solution (norm ~ 1/sqrt(2))
    assert study_h.rows[-1].l2_vs_oracle / (1 / math.sqrt(2)) <= 0.10


def test_study_noise(study_noise):
    rows = {r.param: r.l2_vs_exact for r in study_noise.rows}
    err = [rows[d] for d in STUDY_DELTAS]
    assert all(a >= b for a, b in zip(err, err[1:]))
    assert rows[1e-5] <= 2 * rows[0.0] and rows[1e-3] <= 2 * rows[0.0]
    assert rows[0.5] > rows[1e-5]


def test_study_csv(study_h, tmp_path):
    text = study_h.to_csv()
    lines = text.splitlines()
    assert lines[0] == STUDY_HEADER
    assert len(lines) == 4
    assert lines[1].split(",")[0] == "0.0625"
    assert export_results(study_h, None, tmp_path).name == "study_h.csv"
    with pytest.raises(ConfigurationError):
        export_results(study_h, None, tmp_path, "vtk")


def test_study_deterministic(study_h):
    again = run_study_h(ExperimentConfig(ns=(16, 32, 64)))
    assert again.to_csv() == study_h.to_csv()


def test_vtk_n2():
    text = vtk_text(generate_structured(2, 1.0))
    lines = text.splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert "DATASET UNSTRUCTURED_GRID" in lines
    assert "POINTS 9 double" in lines
    assert "CELLS 8 32" in lines
    i = lines.index("CELL_TYPES 8")
    assert lines[i + 1:i + 9] == ["5"] * 8


def test_reconstruction_exports(tmp_path):
    mesh = generate_structured(64, 1.0)
    target = make_target(0.0)
    rec = reconstruct(mesh, TikhonovConfig(rho=1e-14), target, exact=target.exact)
    csv = export_results(rec, mesh, tmp_path, "csv", exact=target.exact).read_text().splitlines()
    assert csv[0] == "x,z,exact"
    assert len(csv) == 66
    assert csv[1].split(",")[:2] == ["0", "0"] and csv[-1].split(",")[:2] == ["1", "0"]
    vtk = export_results(rec, mesh, tmp_path, "vtk").read_text()
    assert f"POINT_DATA {mesh.n_vertices}" in vtk and "SCALARS u double 1" in vtk
    with pytest.raises(ConfigurationError):
        export_results(rec, mesh, tmp_path, "xml")


# --- CLI -------------------------------------------------------------------------

def test_cli_reconstruct(tmp_path, capsys):
    out = tmp_path / "r"
    assert cli.main(["reconstruct", "--n", "64", "--rho", "1e-14", "--delta", "0", "--path", "coupled", "--out", str(out)]) == 0
    lines = (out / "reconstruction.csv").read_text().splitlines()
    assert len(lines) == 66
    assert (out / "reconstruction.vtk").exists()


@pytest.mark.parametrize("argv", [
    ["reconstruct", "--rho", "0"],
    ["reconstruct", "--bogus"],
    ["frobnicate"],
    ["reconstruct", "--path", "gmres"],
    ["reconstruct", "--n", "16,32"],
    ["reconstruct", "--mesh", "/nonexistent/file.stmesh"],
])
def test_cli_usage_errors(argv, tmp_path, capsys):
    assert cli.main(argv + ["--out", str(tmp_path)] if argv[0] != "frobnicate" else argv) == 1


def test_cli_rho_message(tmp_path, capsys):
    cli.main(["reconstruct", "--rho", "0", "--out", str(tmp_path)])
    assert "rho must be > 0" in capsys.readouterr().err


def test_cli_numerical_failure(monkeypatch, tmp_path, capsys):
    def boom(config, mesh_file):
        raise SolverFailureError("residual too large")

    monkeypatch.setitem(cli.COMMANDS, "forward", boom)
    assert cli.main(["forward", "--out", str(tmp_path)]) == 2


def test_cli_config_file(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# small run\nn = 8\nrho = 1e-10\npath = reduced\nout = {tmp_path / 'o'}\n")
    assert cli.main(["reconstruct", "--config", str(cfg)]) == 0
    assert len((tmp_path / "o" / "reconstruction.csv").read_text().splitlines()) == 10
    cfg.write_text("colour = blue\n")
    assert cli.main(["reconstruct", "--config", str(cfg)]) == 1


def test_cli_all_commands_byte_identical(tmp_path, capsys):
    runs = {
        "mesh": ["mesh.stmesh", "mesh.vtk"],
        "forward": ["forward.csv"],
        "oracle": ["oracle.csv"],
        "study-h": ["study_h.csv"],
        "study-noise": ["study_noise.csv"],
    }
    for cmd, files in runs.items():
        extra = ["--n", "8,16"] if cmd == "study-h" else ["--n", "16"]
        extra += ["--perturb", "0.2", "--seed", "4"] if cmd == "mesh" else []
        for k in ("a", "b"):
            assert cli.main([cmd, *extra, "--out", str(tmp_path / k)]) == 0
        for name in files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_mesh_roundtrip(tmp_path, capsys):
    assert cli.main(["mesh", "--n", "8", "--perturb", "0.2", "--out", str(tmp_path)]) == 0
    assert cli.main(["forward", "--mesh", str(tmp_path / "mesh.stmesh"), "--out", str(tmp_path)]) == 0
    assert cli.main(["study-h", "--mesh", str(tmp_path / "mesh.stmesh"), "--out", str(tmp_path)]) == 1
