"""Base optimizer interface and the shared iteration loop."""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from optimizers.gradient import Objective

logger = logging.getLogger(__name__)


@dataclass
class StepResult:
    """Outcome of one optimizer step."""

    x: np.ndarray
    loss: float
    step_size: float
    converged: bool = False
    function_evals: int = 0


@dataclass
class PhaseResult:
    x: np.ndarray
    loss: float
    initial_loss: float
    iterations: int
    history: list[StepResult] = field(default_factory=list)


class Optimizer(ABC):
    """Abstract base class for optimizers over flat parameter vectors.

    Frozen entries (objective.trainable == False) must come back bit-identical.
    """

    name: str = ""
    # Whether `run` returns the best iterate seen rather than the last one.
    returns_best: bool = False

    def __init__(self, lr: float):
        if lr <= 0.0:
            raise ValueError(f"Learning rate must be positive, got {lr}")
        self.lr = lr

    @abstractmethod
    def step(self, x: np.ndarray, objective: Objective) -> StepResult:
        """Take one step from x and report the loss at the new point."""

    def reset(self) -> None:
        """Forget accumulated state (moments, curvature pairs)."""

    def run(self, x0: np.ndarray, objective: Objective, iterations: int,
            callback: Callable[[int, StepResult], None] | None = None,
            keep_best: bool | None = None) -> PhaseResult:
        """Iterate `iterations` steps, stopping early when the optimizer reports convergence.

        `keep_best` overrides `returns_best`; pass False to always commit the last step.
        """
        keep_best = self.returns_best if keep_best is None else keep_best
        x = np.array(x0, dtype=float)
        initial = objective.value(x)
        best_x, best_loss = x.copy(), initial
        history: list[StepResult] = []
        for iteration in range(iterations):
            result = self.step(x, objective)
            history.append(result)
            x = result.x
            if result.loss < best_loss:
                best_x, best_loss = x.copy(), result.loss
            if callback is not None:
                callback(iteration, result)
            if result.converged:
                logger.debug(f"{self.name} converged after {iteration + 1} iteration(s)")
                break
        if keep_best:
            return PhaseResult(best_x, best_loss, initial, len(history), history)
        final = history[-1].loss if history else initial
        return PhaseResult(x, final, initial, len(history), history)
