import re

import numpy as np
import pytest

from bilevel_soc import reform
from bilevel_soc.problem import bundled_problem

# acceptance outcomes, keyed by criterion number, reported after the run
_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    path, _, name = report.nodeid.partition("::")
    if not path.endswith("test_acceptance.py") or not re.match(r"test_c\d\d_", name):
        return
    num = int(name[6:8])
    ok = report.outcome == "passed" and _ACCEPTANCE.get(num, (True,))[0]
    _ACCEPTANCE[num] = (ok, name)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        ok, name = _ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {name}")


@pytest.fixture(scope="session")
def ex31():
    return bundled_problem("3.1")


@pytest.fixture(scope="session")
def ex46():
    return bundled_problem("4.6")


@pytest.fixture(scope="session")
def ex48():
    return bundled_problem("4.8")


@pytest.fixture(scope="session")
def sigma_grid_46(ex46):
    ax = np.linspace(-0.5, 0.5, 101)
    xs = [np.array([a, b]) for a in ax for b in ax]
    return reform.membership_grid(ex46, xs, kinds=("KKT", "BSOC", "WSOC", "SSOC"))


@pytest.fixture(scope="session")
def sigma_grid_48(ex48):
    xs = [np.array([a]) for a in np.linspace(-1.0, 1.0, 101)]
    return reform.membership_grid(ex48, xs, kinds=("KKT", "BSOC", "WSOC", "SSOC"))
