import pytest
from hypothesis import HealthCheck, settings

from helpers import ACCEPTANCE_LINES, BACKENDS
from xblur import kernels

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(params=BACKENDS)
def backend(request):
    return kernels.get_backend(request.param)


@pytest.fixture
def use_backend(monkeypatch, backend):
    """Route the kernels module through ``backend`` for the test's duration."""
    monkeypatch.setattr(kernels, "_impl", backend)
    return backend


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
