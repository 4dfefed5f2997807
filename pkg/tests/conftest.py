import pytest

_CRITERIA: dict = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: call with (number, detail) before asserting."""
    state = {}

    def record(number: int, detail: str = ""):
        state["n"] = number
        state["detail"] = detail

    yield record
    if "n" in state:
        rep = getattr(request.node, "rep_call", None)
        ok = rep is not None and rep.passed
        _CRITERIA[state["n"]] = (ok, state["detail"])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
