from pathlib import Path

import numpy as np
import pytest

SPEECH_DIR = Path(__file__).parent / "data" / "speech"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def speech_dir():
    return SPEECH_DIR


_VERDICTS = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""
    recorded = []

    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}"
        if detail:
            line += f" ({detail})"
        recorded.append(line)
        _VERDICTS.append((number, line))
        print(line)
        assert ok, line

    yield record
    if not recorded:
        number = request.node.get_closest_marker("criterion").args[0]
        _VERDICTS.append((number, f"[FAIL] criterion {number:>2}: {request.node.name} did not finish"))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
