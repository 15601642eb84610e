import numpy as np
import pytest

from copgraph import InteractionLog


def make_log(sequences, categories=None, ties=False):
    """Log from ``{user: [item, ...]}``; timestamps are positions (all equal if ``ties``)."""
    categories = categories or {}
    records = []
    for user, items in sequences.items():
        for pos, item in enumerate(items):
            records.append((user, item, 0 if ties else 100 + pos, categories.get(item, "")))
    return InteractionLog.from_records(records)


def random_log(rng, n_users=20, n_items=12, n_categories=3, max_len=10, tie_prob=0.0):
    records = []
    for u in range(n_users):
        t = int(rng.integers(0, 50))
        for _ in range(int(rng.integers(1, max_len + 1))):
            item = int(rng.integers(n_items))
            records.append((f"u{u}", f"i{item}", t, f"c{item % n_categories}"))
            if rng.random() >= tie_prob:
                t += int(rng.integers(1, 5))
    return InteractionLog.from_records(records)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def abc_log():
    return make_log({"u1": ["a", "b", "c"]})


# One summary line per acceptance criterion, aggregated over its tests.
_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    marks = getattr(report, "criterion", None)
    if marks is None:
        return
    number, title = marks
    state = _criteria.setdefault(number, {"title": title, "passed": 0, "failed": 0, "skipped": 0, "why": ""})
    if report.failed:
        state["failed"] += 1
    elif report.skipped:
        if report.when in ("setup", "call"):
            state["skipped"] += 1
            state["why"] = str(report.longrepr[-1]) if isinstance(report.longrepr, tuple) else ""
    elif report.when == "call":
        state["passed"] += 1


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        s = _criteria[number]
        if s["failed"]:
            verdict = "FAIL"
        elif s["passed"]:
            verdict = "PASS"
        else:
            verdict = "SKIP"
        line = f"criterion {number:>2} {verdict}  {s['title']}"
        if verdict == "SKIP" and s["why"]:
            line += f"  ({s['why'].removeprefix('Skipped: ')})"
        terminalreporter.write_line(line)
