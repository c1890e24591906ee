import contextlib
import time

import pytest

# criterion number -> (status, title, seconds)
ACCEPTANCE = {}


@contextlib.contextmanager
def _record(number, title):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        ACCEPTANCE[number] = ("FAIL", title, time.perf_counter() - start)
        print(f"[acceptance {number:2d}] FAIL  {title}")
        raise
    ACCEPTANCE[number] = ("PASS", title, time.perf_counter() - start)
    print(f"[acceptance {number:2d}] PASS  {title}")


@pytest.fixture
def criterion():
    """Context manager factory that records one acceptance criterion."""
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, title, secs = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}  ({secs:.1f} s)")
