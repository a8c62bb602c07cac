"""L-BFGS with a strong-Wolfe line search and a steepest-descent fallback.

The line search follows the cubic-interpolation bracketing/zoom scheme used by
PyTorch's and Paddle's L-BFGS, ported to numpy.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from optimizers.base import Optimizer, StepResult
from optimizers.gradient import Objective
from services.exceptions import LineSearchFailed

logger = logging.getLogger(__name__)

C1 = 1e-4
C2 = 0.9
HISTORY_SIZE = 10
MAX_LINE_SEARCH = 20
TOLERANCE_GRAD = 1e-10
TOLERANCE_CHANGE = 1e-16
FALLBACK_HALVINGS = 30


def _cubic_interpolate(x1, f1, g1, x2, f2, g2, bounds=None) -> float:
    """Minimizer of the cubic through (x1, f1, g1) and (x2, f2, g2), clamped to bounds."""
    if bounds is not None:
        xmin_bound, xmax_bound = bounds
    else:
        xmin_bound, xmax_bound = (x1, x2) if x1 <= x2 else (x2, x1)
    if x1 == x2:
        return (xmin_bound + xmax_bound) / 2.0
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    d2_square = d1 * d1 - g1 * g2
    if d2_square >= 0.0:
        d2 = np.sqrt(d2_square)
        if x1 <= x2:
            denom = g2 - g1 + 2.0 * d2
            min_pos = x2 - (x2 - x1) * ((g2 + d2 - d1) / denom) if denom != 0.0 else (x1 + x2) / 2.0
        else:
            denom = g1 - g2 + 2.0 * d2
            min_pos = x1 - (x1 - x2) * ((g1 + d2 - d1) / denom) if denom != 0.0 else (x1 + x2) / 2.0
        return float(min(max(min_pos, xmin_bound), xmax_bound))
    return (xmin_bound + xmax_bound) / 2.0


@dataclass
class LineSearchResult:
    loss: float
    grad: np.ndarray
    t: float
    evaluations: int
    satisfied: bool


def strong_wolfe(obj_func: Callable[[float], tuple[float, np.ndarray]], t: float, d: np.ndarray,
                 f: float, g: np.ndarray, gtd: float, c1: float = C1, c2: float = C2,
                 tolerance_change: float = 1e-9, max_ls: int = MAX_LINE_SEARCH) -> LineSearchResult:
    """Find a step t along d satisfying the strong Wolfe conditions."""
    d_norm = float(np.max(np.abs(d)))
    f_new, g_new = obj_func(t)
    evals = 1
    gtd_new = float(g_new @ d)
    t_prev, f_prev, g_prev, gtd_prev = 0.0, f, g, gtd
    done = False
    ls_iter = 0

    # Bracketing phase.
    while ls_iter < max_ls:
        if f_new > f + c1 * t * gtd or (ls_iter > 1 and f_new >= f_prev):
            bracket = [t_prev, t]
            bracket_f = [f_prev, f_new]
            bracket_g = [g_prev, g_new]
            bracket_gtd = [gtd_prev, gtd_new]
            break
        if abs(gtd_new) <= -c2 * gtd:
            bracket, bracket_f, bracket_g, bracket_gtd = [t], [f_new], [g_new], [gtd_new]
            done = True
            break
        if gtd_new >= 0:
            bracket = [t_prev, t]
            bracket_f = [f_prev, f_new]
            bracket_g = [g_prev, g_new]
            bracket_gtd = [gtd_prev, gtd_new]
            break
        min_step = t + 0.01 * (t - t_prev)
        max_step = t * 10.0
        previous = t
        t = _cubic_interpolate(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, bounds=(min_step, max_step))
        t_prev, f_prev, g_prev, gtd_prev = previous, f_new, g_new, gtd_new
        f_new, g_new = obj_func(t)
        evals += 1
        gtd_new = float(g_new @ d)
        ls_iter += 1
    else:
        bracket = [0.0, t]
        bracket_f = [f, f_new]
        bracket_g = [g, g_new]
        bracket_gtd = [gtd, gtd_new]

    # Zoom phase.
    insufficient_progress = False
    low, high = (0, 1) if bracket_f[0] <= bracket_f[-1] else (1, 0)
    while not done and ls_iter < max_ls:
        if abs(bracket[1] - bracket[0]) * d_norm < tolerance_change:
            break
        t = _cubic_interpolate(bracket[0], bracket_f[0], bracket_gtd[0], bracket[1], bracket_f[1], bracket_gtd[1])
        eps = 0.1 * (max(bracket) - min(bracket))
        if min(max(bracket) - t, t - min(bracket)) < eps:
            if insufficient_progress or t >= max(bracket) or t <= min(bracket):
                t = max(bracket) - eps if abs(t - max(bracket)) < abs(t - min(bracket)) else min(bracket) + eps
                insufficient_progress = False
            else:
                insufficient_progress = True
        else:
            insufficient_progress = False

        f_new, g_new = obj_func(t)
        evals += 1
        gtd_new = float(g_new @ d)
        ls_iter += 1

        if f_new > f + c1 * t * gtd or f_new >= bracket_f[low]:
            bracket[high], bracket_f[high], bracket_g[high], bracket_gtd[high] = t, f_new, g_new, gtd_new
            low, high = (0, 1) if bracket_f[0] <= bracket_f[1] else (1, 0)
        else:
            if abs(gtd_new) <= -c2 * gtd:
                done = True
            elif gtd_new * (bracket[high] - bracket[low]) >= 0:
                bracket[high], bracket_f[high] = bracket[low], bracket_f[low]
                bracket_g[high], bracket_gtd[high] = bracket_g[low], bracket_gtd[low]
            bracket[low], bracket_f[low], bracket_g[low], bracket_gtd[low] = t, f_new, g_new, gtd_new

    if len(bracket) == 1:
        low = 0
    return LineSearchResult(bracket_f[low], bracket_g[low], bracket[low], evals, done)


@dataclass
class LBFGSHistory:
    """Curvature pairs plus the last evaluated point, reused while the objective is unchanged."""

    size: int = HISTORY_SIZE
    s: deque = field(default_factory=deque)
    y: deque = field(default_factory=deque)
    rho: deque = field(default_factory=deque)
    h_diag: float = 1.0
    iterations: int = 0
    last_objective: Objective | None = None
    last_x: np.ndarray | None = None
    last_loss: float | None = None
    last_grad: np.ndarray | None = None

    def push(self, s: np.ndarray, y: np.ndarray) -> bool:
        ys = float(y @ s)
        if ys <= 1e-10:
            return False
        if len(self.s) == self.size:
            self.s.popleft()
            self.y.popleft()
            self.rho.popleft()
        self.s.append(s)
        self.y.append(y)
        self.rho.append(1.0 / ys)
        self.h_diag = ys / float(y @ y)
        return True

    def direction(self, g: np.ndarray) -> np.ndarray:
        """Two-loop recursion: approximately -H g."""
        q = -g.copy()
        alphas = []
        for s, y, rho in zip(reversed(self.s), reversed(self.y), reversed(self.rho)):
            alpha = rho * float(s @ q)
            q -= alpha * y
            alphas.append(alpha)
        r = q * self.h_diag
        for (s, y, rho), alpha in zip(zip(self.s, self.y, self.rho), reversed(alphas)):
            beta = rho * float(y @ r)
            r += s * (alpha - beta)
        return r

    def remember(self, objective: Objective, x: np.ndarray, loss: float, grad: np.ndarray) -> None:
        self.last_objective, self.last_x, self.last_loss, self.last_grad = objective, x.copy(), loss, grad.copy()

    def cached(self, objective: Objective, x: np.ndarray) -> tuple[float, np.ndarray] | None:
        if self.last_objective is objective and self.last_x is not None and np.array_equal(self.last_x, x):
            return self.last_loss, self.last_grad
        return None


def _steepest_descent(objective: Objective, x: np.ndarray, f: float, g: np.ndarray, mask: np.ndarray,
                      lr: float, c1: float) -> tuple[np.ndarray, float, np.ndarray, float, int] | None:
    """Backtrack from t = lr along -g until the Armijo condition holds."""
    d = -g
    gtd = float(g @ d)
    t = lr
    evals = 0
    for _ in range(FALLBACK_HALVINGS):
        candidate = np.where(mask, x + t * d, x)
        f_new = objective.value(candidate)
        evals += 1
        if f_new <= f + c1 * t * gtd and f_new < f:
            return candidate, f_new, objective.gradient(candidate), t, evals
        t *= 0.5
    return None


def lbfgs_step(history: LBFGSHistory, x: np.ndarray, objective: Objective, lr: float, c1: float = C1,
               c2: float = C2, max_line_search: int = MAX_LINE_SEARCH, tolerance_grad: float = TOLERANCE_GRAD,
               tolerance_change: float = TOLERANCE_CHANGE) -> StepResult:
    """One L-BFGS iteration: two-loop direction, strong-Wolfe step, history update.

    Falls back to steepest descent from step `lr` when the direction is not a
    descent direction or the line search cannot satisfy the Wolfe conditions.

    Raises:
        LineSearchFailed: the fallback cannot decrease the loss either while
            the gradient is still significant.
    """
    x = np.asarray(x, dtype=float)
    mask = objective.mask_for(x)
    cached = history.cached(objective, x)
    evals = 0
    if cached is None:
        f, g = objective.value_and_grad(x)
        evals += 1
    else:
        f, g = cached
    if not np.any(mask) or float(np.max(np.abs(g), initial=0.0)) <= tolerance_grad:
        history.remember(objective, x, f, g)
        return StepResult(x, f, 0.0, converged=True, function_evals=evals)

    history.iterations += 1
    if history.s:
        d = history.direction(g)
        t0 = lr
    else:
        d = -g
        t0 = min(1.0, 1.0 / float(np.sum(np.abs(g)))) * lr
    d = np.where(mask, d, 0.0)
    gtd = float(g @ d)

    accepted = None
    if gtd < 0.0:
        def along(t: float) -> tuple[float, np.ndarray]:
            return objective.value_and_grad(np.where(mask, x + t * d, x))

        search = strong_wolfe(along, t0, d, f, g, gtd, c1, c2, max_ls=max_line_search)
        evals += search.evaluations
        if search.satisfied or search.loss <= f + c1 * search.t * gtd and search.loss < f:
            accepted = (np.where(mask, x + search.t * d, x), search.loss, search.grad, search.t)
    else:
        logger.warning(f"L-BFGS direction is not a descent direction (g.d = {gtd:.3g}); using steepest descent")

    if accepted is None:
        logger.warning("Strong Wolfe line search failed; falling back to steepest descent")
        fallback = _steepest_descent(objective, x, f, g, mask, lr, c1)
        if fallback is None:
            gnorm = float(np.max(np.abs(g)))
            if gnorm <= 1e-6 * max(1.0, abs(f)):
                history.remember(objective, x, f, g)
                return StepResult(x, f, 0.0, converged=True, function_evals=evals)
            raise LineSearchFailed(f, float(g @ -g))
        x_new, f_new, g_new, t, fallback_evals = fallback
        evals += fallback_evals
        # The fallback moved along -g; curvature pairs stay valid.
        step = x_new - x
    else:
        x_new, f_new, g_new, t = accepted
        step = x_new - x

    history.push(step, g_new - g)
    history.remember(objective, x_new, f_new, g_new)
    step_size = float(np.max(np.abs(step)))
    converged = step_size <= tolerance_change or abs(f_new - f) <= tolerance_change
    return StepResult(x_new, f_new, step_size, converged=converged, function_evals=evals)


class LBFGS(Optimizer):
    """Limited-memory BFGS; history persists across `step` calls until `reset`."""

    name = "lbfgs"

    def __init__(self, lr: float, history_size: int = HISTORY_SIZE, max_line_search: int = MAX_LINE_SEARCH,
                 tolerance_grad: float = TOLERANCE_GRAD, tolerance_change: float = TOLERANCE_CHANGE):
        super().__init__(lr)
        self.history_size = history_size
        self.max_line_search = max_line_search
        self.tolerance_grad = tolerance_grad
        self.tolerance_change = tolerance_change
        self.history = LBFGSHistory(size=history_size)

    def reset(self) -> None:
        self.history = LBFGSHistory(size=self.history_size)

    def step(self, x: np.ndarray, objective: Objective) -> StepResult:
        return lbfgs_step(self.history, x, objective, self.lr, max_line_search=self.max_line_search,
                          tolerance_grad=self.tolerance_grad, tolerance_change=self.tolerance_change)
