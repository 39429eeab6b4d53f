import pytest

_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.module.__name__.rsplit(".", 1)[-1] != "test_acceptance":
        return
    doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        note = ""
        if rep.skipped and isinstance(rep.longrepr, tuple):
            note = rep.longrepr[2]
        _ACCEPTANCE.append((status, doc, note))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for status, doc, note in _ACCEPTANCE:
        line = f"ACCEPTANCE {status}: {doc}"
        terminalreporter.write_line(line + (f" ({note})" if note else ""))
