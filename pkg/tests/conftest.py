import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE = []


@pytest.fixture
def record():
    """Log one acceptance criterion outcome; printed in the summary."""
    def _record(number, passed, detail):
        ACCEPTANCE.append((number, bool(passed), detail))
        print(f"[acceptance {number}] {'PASS' if passed else 'FAIL'}: {detail}")
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")
