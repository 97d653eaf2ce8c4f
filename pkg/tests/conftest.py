from __future__ import annotations

import pytest

from qcoexist.scenario import default_calibrated_path, default_template_path, load_scenario_file

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def calibrated():
    return load_scenario_file(default_calibrated_path())


@pytest.fixture(scope="session")
def template():
    return load_scenario_file(default_template_path())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
