import pytest

_ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def record():
    """``record(key, passed, detail)`` stores one acceptance verdict for the summary."""
    def _record(key: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[key] = (bool(passed), detail)
        return bool(passed)
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[key]
        tag = "INFO" if key.endswith("-info") else ("PASS" if passed else "FAIL")
        terminalreporter.write_line(f"{tag} {key}: {detail}")
