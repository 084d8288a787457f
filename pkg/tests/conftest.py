import numpy as np
import pytest

from cvqwc import mode

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}

H_IN, V_IN = mode("in", "H"), mode("in", "V")
H_B, V_B = mode("B", "H"), mode("B", "V")


@pytest.fixture
def acceptance():
    """Record one line per acceptance criterion; printed in the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str):
        ACCEPTANCE[number] = (title, bool(passed), detail)
        print(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}")
