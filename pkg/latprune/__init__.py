from .cli import Planner, parse_and_dispatch
from .engine import PruneConfig, plan_once, prune_step, run_pruning
from .netmodel import NetworkSpec, builtin_resnet50, builtin_toy

__all__ = [
    "NetworkSpec", "Planner", "PruneConfig", "builtin_resnet50",
    "builtin_toy", "parse_and_dispatch", "plan_once", "prune_step",
    "run_pruning"
]
