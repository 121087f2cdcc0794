"""Acceptance criteria, one test per criterion; each prints a PASS/FAIL line."""
import itertools
import math
import time

import numpy as np

from conftest import problem
from stinverse import cli
from stinverse.assembly import (
    bilinear_B,
    bilinear_b,
    continuity_constants,
    full_b_matrix,
    norm_X,
    norm_Y,
    terminal_load,
    trace_norm,
)
from stinverse.harness import STUDY_DELTAS, ExperimentConfig, make_target, run_study_h, run_study_noise
from stinverse.inverse import TikhonovConfig, reconstruct, solve_coupled, solve_full_kkt, solve_reduced, trace_function
from stinverse.mesh import generate_structured, perturb_interior
from stinverse.oracle import decay_factors, l2_error, l2_norm, sine_coefficients, tikhonov_solution

RHO = 1e-14


def test_criterion_1_mesh_refinement(report):
    t0 = time.perf_counter()
    result = run_study_h(ExperimentConfig(ns=(16, 32, 64), rho=RHO, deltas=(0.0,)))
    elapsed = time.perf_counter() - t0
    e16, e32, e64 = result.column("l2_vs_exact")
    ok = e16 > e32 > e64 and e64 <= 0.5 * e16 and elapsed < 60
    report(1, ok, f"errors h=1/16,1/32,1/64: {e16:.4e}, {e32:.4e}, {e64:.4e}; "
                  f"ratio 1/64:1/16 = {e64 / e16:.3f} (<= 0.5); {elapsed:.1f} s (< 60)")
    assert ok


def test_criterion_2_noise_levels(report):
    t0 = time.perf_counter()
    result = run_study_noise(ExperimentConfig(ns=(64,), rho=RHO, deltas=STUDY_DELTAS))
    elapsed = time.perf_counter() - t0
    err = result.column("l2_vs_exact")
    ok = bool(np.all(np.diff(err) <= 0)) and elapsed < 90
    listing = ", ".join(f"{d:g}:{e:.4e}" for d, e in zip(STUDY_DELTAS, err))
    report(2, ok, f"non-increasing as delta decreases [{listing}]; {elapsed:.1f} s (< 90)")
    assert ok


def test_criterion_3_oracle(report):
    target = make_target(1e-5)
    observed = sine_coefficients(target)
    oracle = tikhonov_solution(observed, RHO)
    s1 = decay_factors(1, 1.0)[0]
    factor = s1 * s1 / (s1 * s1 + RHO)
    recovered = oracle.coefficients[0] / (observed.coefficients[0] / s1)
    mesh, gm, _ = problem(64)
    rec = reconstruct(mesh, TikhonovConfig(rho=RHO), target, gm=gm)
    relative = l2_error(rec.as_function(), oracle) / l2_norm(oracle)
    ok = relative <= 0.10 and abs(factor - 0.9999963) < 5e-8 and abs(recovered - factor) < 1e-12
    report(3, ok, f"relative L2 vs oracle {relative:.4f} (<= 0.10); mode-1 factor {factor:.7f}")
    assert ok


def test_criterion_4_equivalence(report):
    worst = {"reduced": 0.0, "kkt": 0.0, "z-u0": 0.0, "p0+rho z": 0.0}
    for N, rho, delta in itertools.product((8, 16, 64), (1e-6, 1e-10, 1e-14), (0.0, 1e-3)):
        mesh, gm, fo = problem(N)
        f = terminal_load(mesh, gm.partition, make_target(delta))
        (zc, *_), _ = solve_coupled(gm, rho, f)
        zr, _ = solve_reduced(fo, rho, f)
        (u0, _, _, zk, p0, _, _), _ = solve_full_kkt(gm, rho, f)
        nz = np.linalg.norm(zc)
        worst["reduced"] = max(worst["reduced"], np.linalg.norm(zr - zc) / nz)
        worst["kkt"] = max(worst["kkt"], np.linalg.norm(zk - zc) / nz)
        worst["z-u0"] = max(worst["z-u0"], np.linalg.norm(zk - u0) / np.linalg.norm(zk))
        worst["p0+rho z"] = max(worst["p0+rho z"], np.linalg.norm(p0 + rho * zk) / (rho * np.linalg.norm(zk)))
    ok = worst["reduced"] <= 1e-8 and worst["kkt"] <= 1e-8 and worst["z-u0"] <= 1e-9 and worst["p0+rho z"] <= 1e-9
    report(4, ok, "18 cases; worst " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


def test_criterion_5_adjoint(report):
    worst = 0.0
    for N, amp in itertools.product((8, 64), (0.0, 0.3)):
        _, gm, fo = problem(N, amplitude=amp)
        rng = np.random.default_rng(1000 + N)
        for _ in range(50):
            z, w = rng.standard_normal(gm.partition.n0), rng.standard_normal(gm.partition.nT)
            Az = fo.apply(z)
            gap = abs(Az @ w - z @ fo.apply_transpose(w)) / (np.linalg.norm(Az) * np.linalg.norm(w))
            worst = max(worst, gap)
    ok = worst <= 1e-10
    report(5, ok, f"200 pairs, N in {{8, 64}}, structured and perturbed; worst scaled gap {worst:.1e} (<= 1e-10)")
    assert ok


def test_criterion_6_forward(report):
    T = 0.1
    decay = math.exp(-T * math.pi**2)
    exact = lambda x: decay * np.sin(math.pi * np.asarray(x))  # noqa: E731
    errs = {}
    for N in (32, 64):
        _, gm, fo = problem(N, T=T)
        uT = fo.apply(np.sin(math.pi * gm.x0))
        errs[N] = l2_error(trace_function(gm.xT, uT), exact) / l2_norm(exact)
    ok = errs[32] <= 0.05 and errs[64] < errs[32]
    report(6, ok, f"relative error N=32 {errs[32]:.3e} (<= 0.05), N=64 {errs[64]:.3e}")
    assert ok


def test_criterion_7_inequalities(report):
    _, gm, _ = problem(16)
    n = gm.partition.n
    rng = np.random.default_rng(77)
    violations = 0
    worst = 0.0
    for rho in (1.0, RHO):
        c = continuity_constants(1.0, rho)
        for _ in range(100):
            u, p, v, q = (rng.standard_normal(n) for _ in range(4))
            xu = norm_X(gm, u)
            ratios = [
                abs(bilinear_b(gm, u, v)) / (c.bound_b * xu * norm_Y(gm, v)),
                trace_norm(gm, u, "0") / (c.mu * xu),
                trace_norm(gm, u, "T") / (c.mu * xu),
                abs(bilinear_B(gm, u, p, v, q, rho))
                / (c.bound_B * math.hypot(xu, norm_Y(gm, p)) * math.hypot(norm_X(gm, q), norm_Y(gm, v))),
            ]
            violations += sum(r > 1.0 for r in ratios)
            worst = max(worst, *ratios)
    mu = continuity_constants(1.0, 1.0).mu
    ok = violations == 0 and abs(mu - 1.17175) < 1e-5
    report(7, ok, f"mu = {mu:.5f}; 100 fields x rho in {{1, 1e-14}}; {violations} violations; "
                  f"largest lhs/rhs {worst:.3f}")
    assert ok


def test_criterion_8_kernel_and_determinism(report, tmp_path, capsys):
    worst = 0.0
    for seed in range(5):
        mesh = perturb_interior(generate_structured(16, 1.0), 0.3, seed)
        B = full_b_matrix(mesh)
        worst = max(worst, np.abs(B @ np.ones(mesh.n_vertices)).max() / abs(B).max())
    identical = True
    for cmd, name in (("reconstruct", "reconstruction.csv"), ("study-noise", "study_noise.csv")):
        outs = []
        for k in ("a", "b"):
            assert cli.main([cmd, "--n", "16", "--perturb", "0.2", "--seed", "3", "--out", str(tmp_path / k)]) == 0
            outs.append((tmp_path / k / name).read_bytes())
        identical &= outs[0] == outs[1]
    ok = worst <= 1e-12 and identical
    report(8, ok, f"|B 1|/max|B| = {worst:.1e} (<= 1e-12) on perturbed meshes; repeated CLI runs byte-identical: {identical}")
    assert ok
