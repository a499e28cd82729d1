"""Shared registry so the acceptance suite can print one verdict line per criterion."""

ACCEPTANCE: dict[int, tuple[str, str]] = {}


def record(number: int, verdict: str, detail: str) -> None:
    ACCEPTANCE[number] = (verdict, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        verdict, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {verdict:4s}  {detail}")
