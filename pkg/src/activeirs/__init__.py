"""Joint transmit and reflect beamforming for SWIPT with an active IRS."""

__version__ = "0.1.0"

from .benchmarks import solve_identical_amplitudes, solve_passive
from .channels import FadingConfig, Geometry, Scenario, generate_scenario
from .conic import SolverSettings
from .errors import Infeasible, NoFeasibleCandidate, SolverError, VerificationFailed
from .experiment import ExperimentSpec, emit_results, load_spec, preset, run_experiment
from .report import AOSettings
from .sumpower import solve_sum_power
from .sumrate import solve_sum_rate
from .system import (ChannelSet, Instance, Precoder, ReflectionState, SystemConfig, feasibility_report,
                     harvested_powers, rates, sinrs)
from .theory import verify_theorem1, verify_theorem2_construction
from .wpt import solve_wpt

__all__ = [
    "AOSettings", "ChannelSet", "ExperimentSpec", "FadingConfig", "Geometry", "Infeasible", "Instance",
    "NoFeasibleCandidate", "Precoder", "ReflectionState", "Scenario", "SolverError", "SolverSettings",
    "SystemConfig", "VerificationFailed", "emit_results", "feasibility_report", "generate_scenario",
    "harvested_powers", "load_spec", "preset", "rates", "run_experiment", "sinrs", "solve_identical_amplitudes",
    "solve_passive", "solve_sum_power", "solve_sum_rate", "solve_wpt", "verify_theorem1",
    "verify_theorem2_construction",
]
