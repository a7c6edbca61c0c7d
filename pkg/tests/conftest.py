import logging

import pytest

from sag.crypto import keygen
from sag.transport import SessionParams, memory_session_pair

logging.getLogger("sag").setLevel(logging.ERROR)

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def report(capsys):
    """``report(n, ok, detail)`` prints one acceptance line immediately and in the summary."""
    def emit(n: int, ok: bool, detail: str) -> None:
        line = f"ACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES[n] = line
        with capsys.disabled():
            print("\n" + line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="session")
def keys():
    """Two 256-bit key pairs shared by every test (key generation dominates otherwise)."""
    return keygen(256), keygen(256)


@pytest.fixture
def session_pair(keys):
    opened = []

    def make(**params):
        sa, sb = memory_session_pair(keys[0], keys[1], SessionParams(**params), timeout=30)
        opened.extend([sa, sb])
        return sa, sb

    yield make
    for s in opened:
        s.close()
