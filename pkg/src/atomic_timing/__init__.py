"""Distributed atomic-timing ensemble simulator and control library."""

from atomic_timing.avar import avar_analytic, avar_curve, avar_estimate, optimal_weight, weight_limits
from atomic_timing.clock import (
    AnchorParams,
    ClockNoiseParams,
    ClockState,
    gamma_matrix,
    process_noise_cov,
    system_matrices,
)
from atomic_timing.config import ScenarioConfig, load_config
from atomic_timing.simulator import RunRecord, reference_ensemble_mean, run_scenario, spread_metric
from atomic_timing.topology import Topology

__version__ = "0.1.0"

__all__ = [
    "AnchorParams",
    "ClockNoiseParams",
    "ClockState",
    "RunRecord",
    "ScenarioConfig",
    "Topology",
    "avar_analytic",
    "avar_curve",
    "avar_estimate",
    "gamma_matrix",
    "load_config",
    "optimal_weight",
    "process_noise_cov",
    "reference_ensemble_mean",
    "run_scenario",
    "spread_metric",
    "system_matrices",
    "weight_limits",
]
