import sys
from pathlib import Path

from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    import criteria

    if criteria.LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(criteria.LINES):
            terminalreporter.write_line(criteria.LINES[number])
