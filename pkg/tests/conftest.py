import pytest

_VERDICTS: list[tuple[int, str, bool, str]] = []


class Verdicts:
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""

    def __call__(self, number, name, ok, detail=""):
        _VERDICTS.append((number, name, bool(ok), detail))
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        print(line)
        return ok


@pytest.fixture(scope="session")
def verdict():
    return Verdicts()


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(_VERDICTS, key=lambda v: v[0]):
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
