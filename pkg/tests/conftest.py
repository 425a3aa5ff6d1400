import warnings

import pytest

ACCEPTANCE_FILE = "test_acceptance.py"
_lines = []


def pytest_collection_modifyitems(session, config, items):
    # the additivity audit inspects every attribution made earlier in the session
    last = [it for it in items if it.name.startswith("test_c02_")]
    rest = [it for it in items if not it.name.startswith("test_c02_")]
    items[:] = rest + last


def pytest_runtest_logreport(report):
    if ACCEPTANCE_FILE not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        detail = dict(report.user_properties).get("detail", "")
        verdict = "PASS" if report.outcome == "passed" else "FAIL"
        _lines.append(f"{verdict}  {name}  {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if _lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_lines, key=lambda s: s.split()[1]):
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_constant_feature_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="constant features map to 0.0")
        yield
