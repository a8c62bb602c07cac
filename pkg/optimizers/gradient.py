"""Central finite-difference gradient engine."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from services.exceptions import NonFiniteLoss

logger = logging.getLogger(__name__)

LossFn = Callable[[np.ndarray], float]
GradFn = Callable[[np.ndarray], np.ndarray]


def fd_step(x: np.ndarray) -> np.ndarray:
    """h = max(1e-6, 1e-6 |x|)."""
    return np.maximum(1e-6, 1e-6 * np.abs(x))


def _evaluate(fn: LossFn, points: Sequence[np.ndarray], workers: int) -> list[float]:
    if workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            # map() yields in submission order, so the result does not depend on scheduling.
            return [float(v) for v in executor.map(fn, points)]
    return [float(fn(p)) for p in points]


def central_difference(fn: LossFn, x: np.ndarray, trainable: np.ndarray | None = None,
                       names: Sequence[str] | None = None, workers: int = 1,
                       h: float | None = None) -> np.ndarray:
    """Central differences for every trainable entry; frozen entries get exactly 0.

    The step is `fd_step(x)` unless a fixed `h` is given.

    Raises:
        NonFiniteLoss: a perturbed point produced NaN or inf (names the perturbed entry).
    """
    x = np.asarray(x, dtype=float)
    trainable = np.ones(len(x), dtype=bool) if trainable is None else np.asarray(trainable, dtype=bool)
    indices = np.flatnonzero(trainable)
    grad = np.zeros_like(x)
    if not indices.size:
        return grad
    h = fd_step(x[indices]) if h is None else np.full(indices.size, float(h))
    points = []
    for i, step in zip(indices, h):
        for sign in (1.0, -1.0):
            point = x.copy()
            point[i] += sign * step
            points.append(point)
    values = _evaluate(fn, points, workers)
    for n, i in enumerate(indices):
        f_plus, f_minus = values[2 * n], values[2 * n + 1]
        for point, value in ((points[2 * n], f_plus), (points[2 * n + 1], f_minus)):
            if not math.isfinite(value):
                raise NonFiniteLoss(names[i] if names is not None else f"x[{i}]", float(point[i]), value)
        grad[i] = (f_plus - f_minus) / (points[2 * n][i] - points[2 * n + 1][i])
    return grad


def forward_difference(fn: LossFn, x: np.ndarray, trainable: np.ndarray | None = None,
                       h: float = 1e-7, workers: int = 1) -> np.ndarray:
    """One-sided differences, used as an independent check on the central scheme."""
    x = np.asarray(x, dtype=float)
    trainable = np.ones(len(x), dtype=bool) if trainable is None else np.asarray(trainable, dtype=bool)
    indices = np.flatnonzero(trainable)
    grad = np.zeros_like(x)
    if not indices.size:
        return grad
    points = []
    for i in indices:
        point = x.copy()
        point[i] += h
        points.append(point)
    base = float(fn(x))
    values = _evaluate(fn, points, workers)
    for n, i in enumerate(indices):
        grad[i] = (values[n] - base) / (points[n][i] - x[i])
    return grad


class Objective:
    """A scalar loss over a flat vector, with a trainable mask and a gradient.

    The gradient comes from `grad_fn` when given (masked afterwards) and from
    central differences otherwise.
    """

    def __init__(self, fn: LossFn, trainable: np.ndarray | None = None, names: Sequence[str] | None = None,
                 workers: int = 1, grad_fn: GradFn | None = None):
        self.fn = fn
        self.trainable = None if trainable is None else np.asarray(trainable, dtype=bool)
        self.names = names
        self.workers = max(1, int(workers))
        self.grad_fn = grad_fn
        self.evaluations = 0

    def mask_for(self, x: np.ndarray) -> np.ndarray:
        if self.trainable is None:
            return np.ones(len(x), dtype=bool)
        return self.trainable

    def value(self, x: np.ndarray) -> float:
        self.evaluations += 1
        value = float(self.fn(x))
        if not math.isfinite(value):
            raise NonFiniteLoss(None, None, value)
        return value

    def gradient(self, x: np.ndarray) -> np.ndarray:
        mask = self.mask_for(x)
        if self.grad_fn is not None:
            grad = np.asarray(self.grad_fn(x), dtype=float).copy()
            grad[~mask] = 0.0
            return grad
        self.evaluations += 2 * int(mask.sum())
        return central_difference(self.fn, x, mask, self.names, self.workers)

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        return self.value(x), self.gradient(x)
