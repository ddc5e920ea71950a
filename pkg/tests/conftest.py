import functools

import pytest

from stokesneck.boundary_data import BoundaryData
from stokesneck.experiments import SweepConfig, run_sweep
from stokesneck.functionals import solve_decomposition
from stokesneck.geometry import NeckGeometry
from stokesneck.mesh import build_neck_mesh

ACCEPTANCE_LINES = []


def record_acceptance(number, title, passed, detail):
    ACCEPTANCE_LINES.append((number, f"{'PASS' if passed else 'FAIL'} criterion {number:>2} {title}: {detail}"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def sweep_report(variant, l=None, refinement=False):
    bc = {"class": variant} if l is None else {"class": variant, "l": l}
    return run_sweep(SweepConfig(bc=bc, refinement_check=refinement))


@functools.lru_cache(maxsize=None)
def neck_case(eps, variant="Phi1", l=None):
    geom = NeckGeometry(eps)
    mesh = build_neck_mesh(geom)
    bc = BoundaryData(variant, l)
    return geom, mesh, bc, solve_decomposition(mesh, geom, bc)


@pytest.fixture(scope="session")
def phi1_sweep():
    return sweep_report("Phi1", refinement=True)


@pytest.fixture(scope="session")
def case_1e2():
    return neck_case(1e-2)
