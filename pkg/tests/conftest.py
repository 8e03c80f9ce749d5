import _acceptance_log


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in _acceptance_log.RESULTS:
        terminalreporter.write_line(line)
