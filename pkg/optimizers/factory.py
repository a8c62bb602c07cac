"""Optimizer factory mapping names to optimizer classes."""
from typing import List, Type

from optimizers.adam import Adam
from optimizers.base import Optimizer
from optimizers.lbfgs import LBFGS

# Define a mapping of optimizer keys to their classes
AVAILABLE_OPTIMIZERS: dict[str, Type[Optimizer]] = {
    "adam": Adam,
    "lbfgs": LBFGS,
}


def get_available_optimizer_names() -> List[str]:
    """Returns a list of keys for available optimizers."""
    return list(AVAILABLE_OPTIMIZERS.keys())


def get_optimizer(name: str, lr: float, **options) -> Optimizer:
    """Factory function to build a fresh optimizer by name.

    Raises:
        ValueError: If the requested optimizer is not supported
    """
    key = name.lower()
    if key in AVAILABLE_OPTIMIZERS:
        OptimizerClass = AVAILABLE_OPTIMIZERS[key]
        return OptimizerClass(lr, **options)
    raise ValueError(f"Unsupported optimizer: {name}")
