import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qslab.sphere_field import make_mesh  # noqa: E402


@pytest.fixture(scope="session")
def mesh2():
    return make_mesh(2)


@pytest.fixture(scope="session")
def mesh3():
    return make_mesh(3)


@pytest.fixture(scope="session")
def mesh4():
    return make_mesh(4)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
