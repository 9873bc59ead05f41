import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import acclog  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if acclog.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acclog.LINES:
            terminalreporter.write_line(line)
