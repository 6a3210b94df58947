"""Fair and robust training by clean sample selection under fairness constraints."""

from .dataset import GROUPS, Dataset, GroupKey, load_csv, split, standardize
from .fairness import LambdaState, init_lambda
from .model import LinearModel
from .selection import SelectionProblem, SelectionResult, greedy_select
from .trainer import TrainConfig, multi_seed, train

__version__ = "0.1.0"

__all__ = [
    "GROUPS",
    "Dataset",
    "GroupKey",
    "LambdaState",
    "LinearModel",
    "SelectionProblem",
    "SelectionResult",
    "TrainConfig",
    "greedy_select",
    "init_lambda",
    "load_csv",
    "multi_seed",
    "split",
    "standardize",
    "train",
]
