"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""

CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        name = report.nodeid.split("::")[-1]
        CRITERIA[name] = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(CRITERIA):
        number = int(name.split("_")[2])
        title = " ".join(name.split("_")[3:])
        terminalreporter.write_line(f"criterion {number:2d} {CRITERIA[name]}  {title}")
