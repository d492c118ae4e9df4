import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def pytest_addoption(parser):
    parser.addoption("--skip-slow", action="store_true", help="skip the long end-to-end runs")


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--skip-slow"):
        return
    skip = pytest.mark.skip(reason="--skip-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)



def pytest_terminal_summary(terminalreporter):
    from verdicts import VERDICTS

    if not VERDICTS:
        return
    terminalreporter.section("acceptance")
    for name in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[name])
