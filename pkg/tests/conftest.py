from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

_CRITERIA = {}


def report(n, ok, detail):
    """Print and remember one acceptance line."""
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    _CRITERIA[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
