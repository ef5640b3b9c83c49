from hypothesis import settings

settings.register_profile("default", deadline=None)
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if not test_acceptance.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in test_acceptance.report_lines():
        terminalreporter.write_line(line)
