import functools

import pytest

from ricciflat_end import Forcing, ModelEnd, continue_to_limit, make_grid, normalize_mass

# filled by test_acceptance; printed at the end of the run
ACCEPTANCE_LINES = {}


def power_model(n, N=None, t0=2.0, A=1.0):
    N = 3.0 + 1.0 / n if N is None else N
    return normalize_mass(ModelEnd(n, t0, Forcing("power", A, N)))


@functools.lru_cache(maxsize=None)
def limit_run(n, N=None, T=2000.0, M=512, grading="geometric"):
    """(model, grid, limit, trace), cached across test modules."""
    model = power_model(n, N)
    grid = make_grid(model, T, M, grading)
    limit, trace = continue_to_limit(model, grid)
    return model, grid, limit, trace


@pytest.fixture
def zero_model():
    return ModelEnd(1, 2.0, Forcing("zero"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
