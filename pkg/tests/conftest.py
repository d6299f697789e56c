import time

import pytest

from roomrecon.capsim import RoomScene, TrajectoryConfig, default_intrinsics, simulate

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def default_sim():
    """(stream, ground truth, seconds) for the default configuration, seed 0."""
    t0 = time.perf_counter()
    stream, gt = simulate(RoomScene(), TrajectoryConfig(), default_intrinsics(), 0)
    return stream, gt, time.perf_counter() - t0


@pytest.fixture
def acceptance(request):
    """Record one acceptance line: ``acceptance(name, passed, detail)``. A test
    that raises before recording is listed as a failure under its own name."""
    seen = []

    def record(name, passed, detail=""):
        seen.append(name)
        _ACCEPTANCE.append((name, bool(passed), detail))
        return passed

    yield record
    if not seen:
        _ACCEPTANCE.append((request.node.name, False, "did not complete"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip())
