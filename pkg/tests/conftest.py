import pytest

from flowrvae.neuralcore import available_backends, backend_name, use_backend

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(params=available_backends())
def backend(request):
    """Run the test once per available kernel backend, restoring the default afterwards."""
    previous = backend_name()
    use_backend(request.param)
    yield request.param
    use_backend(previous)


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, ok: bool | None, detail: str):
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        line = f"criterion {number}: {status}  {detail}"
        print(line)
        request.config.stash[_ACCEPTANCE].append(line)
        if ok is None:
            pytest.skip(detail)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
