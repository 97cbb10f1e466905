import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    results = sys.modules.get("test_acceptance")
    if results is not None and results.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in results.RESULTS:
            terminalreporter.write_line(line)
