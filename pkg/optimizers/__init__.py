"""Parameter vectors, finite-difference gradients and the Adam / L-BFGS optimizers."""
from optimizers.adam import Adam, AdamState, adam_step
from optimizers.base import Optimizer, PhaseResult, StepResult
from optimizers.factory import get_available_optimizer_names, get_optimizer
from optimizers.gradient import Objective, central_difference, forward_difference
from optimizers.lbfgs import LBFGS, LBFGSHistory, lbfgs_step
from optimizers.params import FreezeMask, ParamVector, pack, step_scales, unpack

__all__ = [
    "Adam",
    "AdamState",
    "adam_step",
    "Optimizer",
    "PhaseResult",
    "StepResult",
    "get_available_optimizer_names",
    "get_optimizer",
    "Objective",
    "central_difference",
    "forward_difference",
    "LBFGS",
    "LBFGSHistory",
    "lbfgs_step",
    "FreezeMask",
    "ParamVector",
    "pack",
    "step_scales",
    "unpack",
]
