import acceptance_log


def pytest_terminal_summary(terminalreporter):
    if not acceptance_log.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(acceptance_log.LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
