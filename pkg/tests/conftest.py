"""Collects one verdict line per acceptance criterion and prints them at the end."""

VERDICTS: dict[int, list] = {}


def record(criterion: int, ok: bool, detail: str = "") -> None:
    VERDICTS.setdefault(criterion, []).append((bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        parts = VERDICTS[n]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts if d)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
