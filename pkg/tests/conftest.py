import math

import numpy as np
import pytest

from stinverse.assembly import assemble_global
from stinverse.inverse import build_forward
from stinverse.mesh import generate_structured, perturb_interior

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    def _report(criterion, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _report


_CACHE = {}


def problem(N, T=1.0, amplitude=0.0, seed=1):
    """Cached (mesh, global matrices, forward operator)."""
    key = (N, T, amplitude, seed)
    if key not in _CACHE:
        mesh = generate_structured(N, T)
        if amplitude:
            mesh = perturb_interior(mesh, amplitude, seed)
        gm = assemble_global(mesh)
        _CACHE[key] = (mesh, gm, build_forward(gm))
    return _CACHE[key]


@pytest.fixture
def sin_pi():
    return lambda x: np.sin(math.pi * np.asarray(x))
