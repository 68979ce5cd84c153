from __future__ import annotations

import numpy as np
import pytest

from chainrestore.imaging import quantize
from chainrestore.synthesis import gen_clean


@pytest.fixture(scope="session")
def clean256():
    return quantize(gen_clean(11))


@pytest.fixture(scope="session")
def clean64():
    return quantize(gen_clean(5, 64, 64))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion, printed whether or not -s is given
_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.fixture
def note(request):
    """Attach a one-line measurement summary to the current criterion."""
    notes = []
    request.node.criterion_notes = notes
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    n, title = marker.args
    detail = "; ".join(getattr(item, "criterion_notes", []))
    _CRITERIA[n] = ("PASS" if report.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[n]
        line = f"criterion {n} {status}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
