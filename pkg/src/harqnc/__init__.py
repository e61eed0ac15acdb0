"""Networked LQG control over a packet-erasure channel with HARQ retransmissions."""

from .model import (ChannelSpec, CostSpec, PolicySpec, ScenarioConfig, ScenarioError, Schedule,
                    SystemModel, bundled_scenario_path, load_scenario, validate_scenario)
from .lqr import GainSchedule, control_gain, riccati_backward
from .sim import analytic_loss, evaluate_loss, monte_carlo, run_episode

__version__ = "0.1.0"

__all__ = [
    "ChannelSpec", "CostSpec", "GainSchedule", "PolicySpec", "ScenarioConfig", "ScenarioError", "Schedule",
    "SystemModel", "analytic_loss", "bundled_scenario_path", "control_gain", "evaluate_loss", "load_scenario",
    "monte_carlo", "riccati_backward", "run_episode", "validate_scenario",
]
