import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: dict = {}


def report(number: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    _ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
