"""Simulation and analysis toolkit for entanglement distribution over fiber shared with classical time transfer."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CalibrationError,
    ConfigurationError,
    DegenerateError,
    FitError,
    InversionError,
    LinkDownError,
    NoPeakError,
    ParseError,
    PreconditionError,
    QcoexistError,
)
from .scenario import LinkScenario, ScenarioFile, load_scenario_file  # noqa: E402

__all__ = [
    "__version__",
    "CalibrationError",
    "ConfigurationError",
    "DegenerateError",
    "FitError",
    "InversionError",
    "LinkDownError",
    "NoPeakError",
    "ParseError",
    "PreconditionError",
    "QcoexistError",
    "LinkScenario",
    "ScenarioFile",
    "load_scenario_file",
]
