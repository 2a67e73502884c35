import pytest

# criterion number -> (outcome, one-line summary of the measured values)
_REG = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        _REG[props["criterion"]] = (report.outcome, props.get("detail", ""))


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter):
    if not _REG:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_REG):
        outcome, detail = _REG[n]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {detail}")
