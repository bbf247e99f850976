import pytest
from hypothesis import settings

from reachkit.bounds import estimate_all, make_grid, resolve_bounds
from reachkit.model import load_spec

settings.register_profile("reachkit", deadline=None, max_examples=60)
settings.load_profile("reachkit")


@pytest.fixture(scope="session")
def pendulum():
    return load_spec("pendulum")


@pytest.fixture(scope="session")
def cruise():
    return load_spec("cruise")


@pytest.fixture(scope="session")
def pendulum_bounds(pendulum):
    return resolve_bounds(pendulum)


@pytest.fixture(scope="session")
def cruise_bounds(cruise):
    return resolve_bounds(cruise)


@pytest.fixture(scope="session")
def pendulum_raw():
    spec = load_spec("pendulum_estimate")
    raw, details, _ = estimate_all(spec, make_grid(spec, 400))
    return raw, details


@pytest.fixture(scope="session")
def cruise_raw():
    spec = load_spec("cruise_estimate")
    raw, details, _ = estimate_all(spec, make_grid(spec, 60))
    return raw, details


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::" in nodeid and rep.when == "call":
                lines.append((nodeid.split("::")[-1], "PASS" if key == "passed" else "FAIL"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, verdict in sorted(lines):
            terminalreporter.write_line(f"{verdict}  {name}")
