"""Meta-learning with per-module Gaussian shrinkage priors."""

from .adaptation import AdaptationResult, TaskData, adapt, evaluate
from .cg import CGConfig, cg_solve
from .discovery import DiscoveryReport, eval_masked_adaptation, rank_modules
from .driver import ExperimentConfig, meta_test, meta_train
from .metagrad import MetaGradient
from .models import Batch, GaussianObsModel, SinusoidMLP, TaskModel
from .prior import ContractError, MetaParams, ModulePartition

__all__ = [
    "AdaptationResult", "Batch", "CGConfig", "ContractError", "DiscoveryReport",
    "ExperimentConfig", "GaussianObsModel", "MetaGradient", "MetaParams", "ModulePartition",
    "SinusoidMLP", "TaskData", "TaskModel", "adapt", "cg_solve", "eval_masked_adaptation",
    "evaluate", "meta_test", "meta_train", "rank_modules",
]
