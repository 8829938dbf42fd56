import pytest

# a configuration small enough for a run to take a few seconds
TINY = {
    "model.n_t": 8,
    "model.n_c": 2,
    "heom.depth": 1,
    "heom.t_end": 240.0,
    "analysis.window_start": 200.0,
    "analysis.window_end": 240.0,
    "analysis.period_start": 0.0,
    "analysis.period_end": 240.0,
}


@pytest.fixture
def tiny():
    return dict(TINY)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
