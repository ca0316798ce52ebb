import sys
import time
from contextlib import contextmanager
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

RESULTS = {}


class Record:
    def __init__(self, number, title, limit):
        self.number, self.title, self.limit = number, title, limit
        self.detail = ""
        self.elapsed = None
        self.passed = False


@contextmanager
def _criterion(number, title, limit):
    rec = Record(number, title, limit)
    RESULTS[number] = rec
    start = time.perf_counter()
    yield rec
    rec.elapsed = time.perf_counter() - start
    assert rec.elapsed < limit, f"runtime {rec.elapsed:.2f} s exceeds {limit} s"
    rec.passed = True


@pytest.fixture
def criterion():
    """Context manager recording one acceptance criterion; the body asserts, the exit checks runtime."""
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        rec = RESULTS[number]
        status = "PASS" if rec.passed else "FAIL"
        elapsed = "n/a" if rec.elapsed is None else f"{rec.elapsed:.2f}s"
        terminalreporter.write_line(
            f"[{status}] {number}. {rec.title}: {rec.detail} (runtime {elapsed}, limit {rec.limit}s)"
        )
