"""Traffic simulator and command-line orchestration."""

from .simulator import COVERT_KINDS, ScenarioConfig, Simulation, generate_traffic, load_scenario, parse_scenario_text, simulate

__all__ = ["COVERT_KINDS", "ScenarioConfig", "Simulation", "generate_traffic", "load_scenario",
           "parse_scenario_text", "simulate"]
