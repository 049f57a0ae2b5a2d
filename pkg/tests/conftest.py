import contextlib
import time

import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def criterion(request):
    """Context manager recording one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash[_LINES]

    @contextlib.contextmanager
    def check(label, limit_s=None):
        start = time.perf_counter()
        note = {}
        try:
            yield note
            elapsed = time.perf_counter() - start
            if limit_s is not None:
                assert elapsed < limit_s, f"took {elapsed:.1f} s, limit {limit_s} s"
        except BaseException as exc:
            lines.append(f"FAIL  {label}  ({exc})".replace("\n", " "))
            raise
        extra = note.get("detail", "")
        lines.append(f"PASS  {label}  [{elapsed:.2f} s]{'  ' + extra if extra else ''}")

    return check


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_LINES]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
