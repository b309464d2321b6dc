"""Online learning to rank under the position-based click model with several user types.

GreedyRank and UCBRank, each with personalized or equal treatment, plus the
simulator, estimators and the experiment harness around them.
"""
from .environment import Feedback, step
from .estimators import LearnerState, record
from .harness import RegretTrace, run, run_many, solve_oracle, sublinearity_check
from .ingest import ClickRecord, fit_instance, generate_log
from .model import (
    Permutation,
    ProblemInstance,
    RewardModel,
    UtilityFunction,
    cuf_value,
    expected_user_value,
    random_instance,
    table1_instance,
    validate,
)
from .optimizer import FractionSchedule, OptimizerConfig
from .policies import PolicyConfig, PolicyState, decide, observe
from .rng import RngStream, derive_seed

__version__ = "0.1.0"

__all__ = [
    "ClickRecord", "Feedback", "FractionSchedule", "LearnerState", "OptimizerConfig",
    "Permutation", "PolicyConfig", "PolicyState", "ProblemInstance", "RegretTrace",
    "RewardModel", "RngStream", "UtilityFunction", "cuf_value", "decide", "derive_seed",
    "expected_user_value", "fit_instance", "generate_log", "observe", "random_instance",
    "record", "run", "run_many", "solve_oracle", "step", "sublinearity_check",
    "table1_instance", "validate",
]
