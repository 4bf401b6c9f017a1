"""Collects the acceptance results and prints one PASS/FAIL line per criterion."""

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        props = dict(report.user_properties)
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE[name] = (report.outcome, props.get("measured", ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        outcome, measured = _ACCEPTANCE[name]
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"{status}  {name}"
        if measured:
            line += f"  [{measured}]"
        terminalreporter.write_line(line)
