import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    module = sys.modules.get("test_acceptance") \
        or sys.modules.get("tests.test_acceptance")
    if module is None:
        return
    recorded = dict(getattr(module, "VERDICTS", {}))
    expected = getattr(module, "CRITERIA", ())
    if not recorded and not expected:
        return
    terminalreporter.ensure_newline()
    terminalreporter.section("acceptance criteria")
    for number in expected:
        if number in recorded:
            ok, detail = recorded[number]
            line = "[criterion %02d] %s %s" \
                % (number, "PASS" if ok else "FAIL", detail)
        else:
            line = "[criterion %02d] NOT RUN" % number
        terminalreporter.write_line(line)
    grid = getattr(module, "GRID_LINES", ())
    if grid:
        terminalreporter.section("held-out transfer grid", sep="-")
        for line in grid:
            terminalreporter.write_line(line)
