import pytest

from dimect.forward import DEFAULT_PROBE, compute_f_grid


@pytest.fixture(scope="session")
def probe():
    return DEFAULT_PROBE


@pytest.fixture(scope="session")
def default_grid(probe):
    """The 200 x 200 log grid over the default (pi2, pi3) box."""
    return compute_f_grid(probe)


_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def record_criterion(request):
    """Call with (number, passed, detail); lines are printed at the end of the run."""
    results = request.config.stash.setdefault(_RESULTS, [])

    def record(number: int, passed: bool, detail: str) -> None:
        results.append((number, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, [])
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, passed, detail in sorted(results):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
