"""Projected-gradient machinery shared by the QP and CP solvers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class FirstOrderResult:
    x: np.ndarray
    fun: float
    iterations: int
    converged: bool
    residual: float  # gradient-mapping norm at x


def gradient_mapping(x, grad, project, step):
    """(x - P(x - step * grad)) / step; zero exactly at stationary points."""
    return (x - project(x - step * grad)) / step


def accelerated_projected_gradient(
    fun: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    project: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    lipschitz: float | None = None,
    tol: float = 1e-9,
    max_iter: int = 100_000,
    stall_window: int = 5000,
) -> FirstOrderResult:
    """FISTA with function-value restart.

    With ``lipschitz`` given the step is fixed at 1/L; otherwise it is found
    by backtracking (and relaxed by 10% per accepted step). Stops when the
    gradient mapping's inf-norm drops below ``tol * max(1, |grad(x)|_inf)``,
    or gives up (``converged=False``) when that residual has not improved
    for ``stall_window`` iterations.
    """
    x = project(np.asarray(x0, dtype=float))
    fx = fun(x)
    y, t = x.copy(), 1.0
    fixed = lipschitz is not None
    L = lipschitz if fixed and lipschitz > 0 else 1.0
    residual = best_res = np.inf
    best_k = 0
    for k in range(1, max_iter + 1):
        gy = grad(y)
        fy = fun(y)
        while True:
            x_new = project(y - gy / L)
            d = x_new - y
            f_new = fun(x_new)
            if fixed or f_new <= fy + gy @ d + 0.5 * L * (d @ d) + 1e-14 * abs(fy) or L > 1e20:
                break
            L *= 2.0
        restarted = t == 1.0
        if f_new > fx + 1e-14 * max(1.0, abs(fx)) and not restarted:
            # momentum overshot: restart from the last accepted point; a plain
            # projected step from there is always taken (descent up to rounding)
            y, t = x.copy(), 1.0
            continue
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, fx, t = x_new, f_new, t_new
        gx = grad(x)
        residual = float(np.max(np.abs(gradient_mapping(x, gx, project, 1.0 / L))))
        if residual <= tol * max(1.0, float(np.max(np.abs(gx)))):
            return FirstOrderResult(x, fx, k, True, residual)
        if residual < 0.5 * best_res:
            best_res, best_k = residual, k
        elif k - best_k > stall_window:
            break
        if not fixed:
            L = max(L * 0.9, 1e-12)
    return FirstOrderResult(x, fx, k, False, residual)
