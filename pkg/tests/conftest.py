import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> list of (label, passed, detail), filled by the acceptance module
ACCEPTANCE = {}


@pytest.fixture
def record():
    def _record(criterion: int, label: str, passed: bool, detail: str = ""):
        ACCEPTANCE.setdefault(criterion, []).append((label, bool(passed), detail))
        return bool(passed)
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[k]
        ok = all(p for _, p, _ in checks)
        parts = "; ".join(f"{label} {'ok' if p else 'FAILED'}{' (' + d + ')' if d else ''}"
                          for label, p, d in checks)
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {parts}")
