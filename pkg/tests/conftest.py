import pytest

from scalekit import numkernel as nk
from scalekit.phasetype import PhaseTypeDist
from scalekit.specfile import bundled_path, load_model

# Example 2 as shipped places F4 beyond the MGF abscissa of F2; tests use the
# largest round value that keeps the tilt feasible.
EXAMPLE2_PARAMS = {"f4_theta": "0.15"}


def bundled(name, **params):
    base = dict(EXAMPLE2_PARAMS) if name.startswith("example2") else {}
    base.update(params)
    return load_model(bundled_path(name), base)


@pytest.fixture(scope="session")
def ex1_sn():
    return bundled("example1_sn")


@pytest.fixture(scope="session")
def ex1_sp():
    return bundled("example1_sp")


@pytest.fixture(scope="session")
def f0(ex1_sn):
    return ex1_sn.f0


@pytest.fixture(scope="session")
def f2(ex1_sn):
    return ex1_sn.laws["F2"]


def exponential(rate, kill=0):
    return PhaseTypeDist.from_arrays(["1"], [[-nk.big(rate) - nk.big(kill)]], q=[kill])


def close(a, b, tol):
    return abs(nk.big(a) - nk.big(b)) <= nk.big(tol)


def max_abs(m):
    return max(abs(x) for x in m.ravel())


# criterion number -> (passed, detail), filled in by test_acceptance
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    return ACCEPTANCE


def acceptance_line(n, passed, detail):
    return f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(acceptance_line(n, *ACCEPTANCE[n]))
