import pytest

from pqmrl.harness.config import make_config
from pqmrl.harness.training import init_state, train_loop


@pytest.fixture(scope="session")
def trained_bitflip6():
    """PQM on 6-bit flip, trained long enough to solve the task."""
    state = init_state(make_config("bitflip", bits=6, epochs=60, seed=0, record_wall_time=False))
    train_loop(state)
    return state


_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    number = getattr(item.function, "criterion", None)
    if number is None or report.when != "call" and report.passed:
        return
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    prev = _CRITERIA.get(number)
    if prev is None or prev[0] == "PASS":
        _CRITERIA[number] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}".rstrip())
