import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (outcome, title, details) for the acceptance summary
_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): acceptance criterion n")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    n, title = marker.args
    details = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    if call.when == "setup" and call.excinfo is not None:
        skipped = call.excinfo.typename == "Skipped"
        _ACCEPTANCE[n] = ("SKIP" if skipped else "FAIL", title, str(call.excinfo.value) if skipped else details)
    elif call.when == "call":
        if call.excinfo is None:
            _ACCEPTANCE[n] = ("PASS", title, details)
        elif call.excinfo.typename == "Skipped":
            _ACCEPTANCE[n] = ("SKIP", title, str(call.excinfo.value))
        else:
            _ACCEPTANCE[n] = ("FAIL", title, details)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        outcome, title, details = _ACCEPTANCE[n]
        line = f"criterion {n}: {outcome}  {title}"
        terminalreporter.write_line(line + (f"  ({details})" if details else ""))
