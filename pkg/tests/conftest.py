"""Shared pytest plumbing: collects acceptance verdicts and prints them at the end."""

import pytest

_VERDICTS: dict[int, tuple[str, str, str]] = {}


class CriterionLog:
    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.details: list[str] = []

    def note(self, text: str) -> None:
        self.details.append(text)


@pytest.fixture
def criterion(request):
    """Register the test as acceptance criterion N (from its ``acceptance`` marker)."""
    marker = request.node.get_closest_marker("acceptance")
    log = CriterionLog(*marker.args)
    request.node._criterion_log = log
    return log


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    log = getattr(item, "_criterion_log", None)
    if log is None:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        verdict = "PASS" if report.passed else "FAIL"
        _VERDICTS[log.number] = (verdict, log.title, "; ".join(log.details))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        verdict, title, detail = _VERDICTS[number]
        line = f"criterion {number:2d} {verdict}: {title}"
        if detail:
            line += f" [{detail}]"
        terminalreporter.write_line(line)
