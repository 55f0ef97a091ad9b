from collections import defaultdict

import pytest

_ACCEPTANCE = defaultdict(list)


@pytest.fixture
def record():
    """record(criterion, ok, detail): one part of an acceptance criterion."""

    def add(criterion, ok, detail):
        _ACCEPTANCE[criterion].append((bool(ok), detail))
        return ok

    return add


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[k]
        tag = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{d} [{'ok' if ok else 'not met'}]" for ok, d in parts)
        terminalreporter.write_line(f"{tag} criterion {k}: {detail}")
