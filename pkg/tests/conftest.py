import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    name = report.nodeid.split("::")[-1]
    number = int(name.split("_")[2])
    props = dict(report.user_properties)
    _ACCEPTANCE[number] = (name, "PASS" if report.passed else "FAIL", props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        name, outcome, detail = _ACCEPTANCE[number]
        line = f"criterion {number:2d} {outcome}  {name}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)
