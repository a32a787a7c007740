"""Configuration-driven experiment runner and command line interface."""

from .config import KINDS, ConfigError, ExperimentConfig, load, parse_text
from .results import Series, StudyResult, emit_outputs
from .studies import STUDIES, StudyAbort, run_all, run_study

__all__ = ["KINDS", "ConfigError", "ExperimentConfig", "load", "parse_text", "Series", "StudyResult",
           "emit_outputs", "STUDIES", "StudyAbort", "run_all", "run_study"]
