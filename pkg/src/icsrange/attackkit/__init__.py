"""Capability-gated attack scenarios against the simulated range."""
from .runner import CapabilityError, Outcome, Runner, run_scenario
from .scenario import (CAPABILITIES, Scenario, ScenarioError, Step, list_scenarios,
                       load_scenario, parse_scenario)

__all__ = [
    "CAPABILITIES", "CapabilityError", "Outcome", "Runner", "Scenario", "ScenarioError",
    "Step", "list_scenarios", "load_scenario", "parse_scenario", "run_scenario",
]
