"""Scenario files, the run loop, experiments, output and the command line."""

from .config import RunSettings, Scenario, ScenarioError, load_scenario, parse_scenario
from .runner import Trajectory, run

__all__ = ["RunSettings", "Scenario", "ScenarioError", "load_scenario", "parse_scenario", "Trajectory", "run"]
