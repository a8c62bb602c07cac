"""Adam with decoupled weight decay."""
import logging
from dataclasses import dataclass

import numpy as np

from optimizers.base import Optimizer, StepResult
from optimizers.gradient import Objective

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(state: AdamState, x: np.ndarray, grad: np.ndarray, lr: float, weight_decay: float = 0.0,
              mask: np.ndarray | None = None, scale: np.ndarray | float = 1.0,
              betas: tuple[float, float] = (BETA1, BETA2), eps: float = EPS) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns the new point and state.

    The update runs in the coordinates z = x / scale, so each entry moves by
    about lr * scale. Weight decay multiplies trainable entries by
    (1 - lr * weight_decay) before the step. Entries outside `mask` are
    returned unchanged.
    """
    beta1, beta2 = betas
    x = np.asarray(x, dtype=float)
    scale = np.broadcast_to(np.asarray(scale, dtype=float), x.shape)
    mask = np.ones(x.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    g = np.where(mask, np.asarray(grad, dtype=float) * scale, 0.0)

    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)

    decayed = x * (1.0 - lr * weight_decay) if weight_decay else x
    updated = decayed - lr * scale * m_hat / (np.sqrt(v_hat) + eps)
    return np.where(mask, updated, x), AdamState(m, v, t)


class Adam(Optimizer):
    """Adam over a masked objective. `run` returns the best iterate seen."""

    name = "adam"
    returns_best = True

    def __init__(self, lr: float, weight_decay: float = 0.0, scale: np.ndarray | float = 1.0,
                 betas: tuple[float, float] = (BETA1, BETA2), eps: float = EPS):
        super().__init__(lr)
        self.weight_decay = weight_decay
        self.scale = scale
        self.betas = betas
        self.eps = eps
        self.state: AdamState | None = None

    def reset(self) -> None:
        self.state = None

    def step(self, x: np.ndarray, objective: Objective) -> StepResult:
        x = np.asarray(x, dtype=float)
        if self.state is None or len(self.state.m) != len(x):
            self.state = AdamState.zeros(len(x))
        grad = objective.gradient(x)
        x_new, self.state = adam_step(self.state, x, grad, self.lr, self.weight_decay,
                                      objective.mask_for(x), self.scale, self.betas, self.eps)
        loss = objective.value(x_new)
        return StepResult(x_new, loss, float(np.max(np.abs(x_new - x))) if len(x) else 0.0)
