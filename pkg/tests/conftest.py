import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        details = "; ".join(f"{k}={v}" for k, v in report.user_properties)
        ACCEPTANCE[name] = ("PASS" if report.passed else "FAIL", details)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda n: int(n.split("_")[1])):
        status, details = ACCEPTANCE[name]
        terminalreporter.write_line(f"{status} {name}" + (f" ({details})" if details else ""))
