import numpy as np
import pytest

from gsd.flatten import conformal_to_sphere
from gsd.mesh import TriangleMesh
from gsd.shapes import gen_ellipsoid, gen_three_bump, sphere_mesh

# acceptance criteria register (number, passed, detail) here; printed at the end of the run
ACCEPTANCE = []


def tetrahedron(edge=1.0):
    """Regular tetrahedron with the given edge length, outward-oriented."""
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    v *= edge / np.sqrt(8.0)
    t = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriangleMesh(v, t)


@pytest.fixture(scope="session")
def tet():
    return tetrahedron()


@pytest.fixture(scope="session")
def ico2():
    return sphere_mesh(2)


@pytest.fixture(scope="session")
def ico3():
    return sphere_mesh(3)


@pytest.fixture(scope="session")
def ico_fine():
    return sphere_mesh("f29")


@pytest.fixture(scope="session")
def param_ico3(ico3):
    return conformal_to_sphere(ico3)


@pytest.fixture(scope="session")
def param_fine(ico_fine):
    return conformal_to_sphere(ico_fine)


@pytest.fixture(scope="session")
def ellipsoid15():
    return gen_ellipsoid(1.5, 1.0, 1.0, 3)


@pytest.fixture(scope="session")
def param_ellipsoid15(ellipsoid15):
    return conformal_to_sphere(ellipsoid15)


@pytest.fixture(scope="session")
def bump0():
    return gen_three_bump(0.0, 2)


def pytest_terminal_summary(terminalreporter):
    tr = terminalreporter
    if not ACCEPTANCE and not any(
        "test_acceptance" in rep.nodeid for key in ("passed", "failed") for rep in tr.stats.get(key, [])
    ):
        return
    # criterion 11: every module-level property test outside the acceptance file passed
    others = [
        rep
        for key in ("passed", "failed", "error")
        for rep in tr.stats.get(key, [])
        if getattr(rep, "when", "call") == "call" and "test_acceptance" not in rep.nodeid
    ]
    failed = [rep.nodeid for rep in others if rep.outcome != "passed"]
    tr.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        status = "PASS" if passed is True else ("FAIL" if passed is False else passed)
        tr.write_line(f"[{status}] criterion {number}: {detail}")
    if not others:
        tr.write_line("[SKIP] criterion 11: property suites not part of this run")
    else:
        ok = not failed
        tr.write_line(
            f"[{'PASS' if ok else 'FAIL'}] criterion 11: property suites, {len(others) - len(failed)}/{len(others)} passed"
        )
