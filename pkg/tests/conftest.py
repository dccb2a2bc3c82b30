import json
import threading
from importlib import resources
from pathlib import Path

import pytest

from screenr.backend import CompletionUsage
from screenr.conversation import Message, Role
from screenr.review import Source

FIXTURES = Path(str(resources.files("screenr").joinpath("fixtures")))


@pytest.fixture
def alpaca_review() -> str:
    return (FIXTURES / "alpaca_review.txt").read_text(encoding="utf-8")


@pytest.fixture
def alpaca_source() -> Source:
    from screenr.review import ingest_sources

    sources, _ = ingest_sources(FIXTURES / "alpaca_sources.csv")
    return sources[0]


@pytest.fixture
def alpaca_script() -> list[str]:
    return json.loads((FIXTURES / "alpaca_script.json").read_text(encoding="utf-8"))["replies"]


def make_sources(n: int, prefix: str = "s") -> list[Source]:
    return [Source(f"{prefix}{i}", f"Title number {i} of {prefix}", f"Abstract body {i} for {prefix}.") for i in range(n)]


class RuleBackend:
    """Answers by inspecting the conversation, so replies don't depend on call
    order. Sources whose title contains ``KEEPME`` are included. Safe to share
    between threads."""

    model_name = "rule"

    def __init__(self, fail_on: set[str] = frozenset(), crash_after: int | None = None, crash=KeyboardInterrupt):
        self.calls = 0
        self.screenings = 0
        self.fail_on = set(fail_on)
        self.crash_after = crash_after
        self.crash = crash
        self._lock = threading.Lock()

    def complete(self, conv):
        last = conv[-1].content
        with self._lock:
            self.calls += 1
            if self.crash_after is not None and self.screenings >= self.crash_after:
                raise self.crash()
        users = [m.content for m in conv if m.role is Role.USER]
        if "INCLUDE or EXCLUDE" not in last:
            return Message(Role.ASSISTANT, "1. criterion one\n2. criterion two"), CompletionUsage(10, 5)
        source_text = next(u for u in users if "Abstract:" in u)
        with self._lock:
            self.screenings += 1
        if any(tag in source_text for tag in self.fail_on):
            return Message(Role.ASSISTANT, "no idea"), CompletionUsage(10, 5)
        verdict = "INCLUDE" if "KEEPME" in source_text else "EXCLUDE"
        return Message(Role.ASSISTANT, verdict), CompletionUsage(10, 5)


@pytest.fixture
def rule_backend():
    return RuleBackend()


# acceptance reporting: one line per criterion at the end of the run

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by this test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, title = marker
    entry = _criteria.setdefault(number, {"title": title, "outcomes": []})
    if report.when == "call" or report.outcome != "passed":
        entry["outcomes"].append("skipped" if report.skipped else report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        outs = entry["outcomes"]
        if any(o == "failed" for o in outs):
            status = "FAIL"
        elif outs and all(o == "skipped" for o in outs):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {entry['title']}")
