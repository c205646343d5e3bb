"""Resource allocation for multi-operator cognitive satellite uplinks with
limited inter-operator information exchange."""

from .algorithms import (
    STRATEGIES,
    StrategyResult,
    run_admm,
    run_centralized,
    run_channel_share,
    run_equal_split,
    run_iter_equal_split,
    run_strategy,
)
from .metrics import ExchangeLedger, evaluate_sum_rate, oracle_solve
from .quantizer import UNQUANTIZED, QuantizerConfig, quantize_gain, quantize_level
from .scenario import Dimensions, Scenario, ScenarioSpec, generate_scenario, load_scenario, save_scenario
from .solver import Allocation, RaProblem, solve_pipeline

__version__ = "0.1.0"

__all__ = [
    "STRATEGIES", "StrategyResult", "run_admm", "run_centralized", "run_channel_share",
    "run_equal_split", "run_iter_equal_split", "run_strategy",
    "ExchangeLedger", "evaluate_sum_rate", "oracle_solve",
    "UNQUANTIZED", "QuantizerConfig", "quantize_gain", "quantize_level",
    "Dimensions", "Scenario", "ScenarioSpec", "generate_scenario", "load_scenario", "save_scenario",
    "Allocation", "RaProblem", "solve_pipeline",
]
