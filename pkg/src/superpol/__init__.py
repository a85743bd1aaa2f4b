"""Super-policy learning for confounded contextual bandits and memoryless confounded POMDPs."""
from .bandit import Backends, estimate_value, learn
from .datamodel import (
    BanditDataset,
    CVSpec,
    EstimatorConfig,
    PolicyKind,
    SequentialDataset,
    random_split,
    validate,
)
from .evaluation import ExperimentConfig, regret, render, run_replications, split_evaluate
from .sequential import act_seq, estimate_value_seq, learn_seq

__version__ = "0.1.0"

__all__ = [
    "Backends",
    "BanditDataset",
    "CVSpec",
    "EstimatorConfig",
    "ExperimentConfig",
    "PolicyKind",
    "SequentialDataset",
    "act_seq",
    "estimate_value",
    "estimate_value_seq",
    "learn",
    "learn_seq",
    "random_split",
    "regret",
    "render",
    "run_replications",
    "split_evaluate",
    "validate",
]
