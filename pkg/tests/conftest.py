import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def record_acceptance(name: str, ok: bool, detail: str = "", hard: bool = True) -> None:
    """Collect one pass/fail line per acceptance criterion.

    Lines are echoed immediately (visible with -s) and repeated in the
    terminal summary so they survive output capture. hard=False marks
    report-only checks whose failure does not fail the suite.
    """
    status = "PASS" if ok else ("FAIL" if hard else "FAIL (report-only)")
    line = f"{name}: {status}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(f"[acceptance] {line}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
