"""Shared pytest hooks: one pass/fail line per acceptance criterion in the terminal summary."""

ACCEPTANCE_RESULTS = {}


def record_acceptance(number, title, checks):
    """Store ``checks`` (a list of ``(name, ok, detail)``) for criterion ``number``; return overall status."""
    ok = all(c[1] for c in checks)
    ACCEPTANCE_RESULTS[number] = (title, ok, checks)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, ok, checks = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}")
        for name, passed, detail in checks:
            terminalreporter.write_line(f"    {'ok  ' if passed else 'FAIL'} {name}: {detail}")
