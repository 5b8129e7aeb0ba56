"""QP and generic convex solvers."""

from __future__ import annotations

import numpy as np

from chargeplan.model import CpInstance, QpInstance, TimeGrid
from chargeplan.solvers.first_order import accelerated_projected_gradient, gradient_mapping
from chargeplan.solvers.linear import box_feasible, minimax_affine
from chargeplan.solvers.projection import Projector
from chargeplan.solvers.result import SolveResult, SolveStatus, make_result
from chargeplan.solvers import simplex

QP_MAX_ITER = 100_000
CP_MAX_ITER = 100_000
KELLEY_MAX_ITER = 2000
KELLEY_MAX_DIM = 12


def _start_point(project, n, init, lo):
    if init is not None:
        x0 = project(np.asarray(init, dtype=float))
        if x0 is not None:
            return x0
    return project(np.zeros(n))


def kkt_residual(inst: QpInstance, x) -> float:
    """Inf-norm of the unit-step gradient mapping of the QP at ``x``."""
    proj = Projector.build(inst.bounds.x_min, inst.bounds.x_max, inst.A, inst.b,
                           inst.A_eq, inst.b_eq, n=inst.size)
    g = inst.Q @ x + inst.c
    return float(np.max(np.abs(gradient_mapping(np.asarray(x, dtype=float), g, proj, 1.0))))


def solve_qp(inst: QpInstance, grid: TimeGrid, init=None, tol: float = 1e-10,
             max_iter: int = QP_MAX_ITER) -> SolveResult:
    n = inst.size
    if n != grid.num_slots:
        raise ValueError(f"instance has {n} variables for a {grid.num_slots}-slot grid")
    lo, hi = inst.bounds.x_min, inst.bounds.x_max
    zeros = np.full(n, lo)
    if not box_feasible(n, lo, hi, inst.A, inst.b, inst.A_eq, inst.b_eq):
        return make_result(grid, zeros, np.nan, SolveStatus.INFEASIBLE, 0)
    project = Projector.build(lo, hi, inst.A, inst.b, inst.A_eq, inst.b_eq, n=n)
    x0 = _start_point(project, n, init, lo)
    L = float(np.linalg.eigvalsh(inst.Q).max()) if n else 0.0
    res = accelerated_projected_gradient(
        inst.objective, lambda x: inst.Q @ x + inst.c, project, x0,
        lipschitz=L if L > 1e-12 else 1.0, tol=tol, max_iter=max_iter)
    status = SolveStatus.OPTIMAL if res.converged else SolveStatus.MAX_ITERATIONS
    return make_result(grid, res.x, inst.objective(res.x), status, res.iterations,
                       kkt_residual=kkt_residual(inst, res.x))


def _kelley(inst: CpInstance, x0, lo, hi, tol, max_iter):
    """Cutting planes for problems with convex inequality oracles.

    Each round solves min_x max_k (cut of f at x_k) subject to the
    linearized g_i cuts, the equality rows and the box; the piecewise-affine
    model only ever under-estimates, so the gap to the best feasible value
    certifies the optimum.
    """
    n = inst.size
    cuts_F, cuts_g = [], []
    con_A, con_b = [], []
    best_x, best_f = None, np.inf
    x = x0
    for k in range(1, max_iter + 1):
        fx = inst.objective.evaluate(x)
        s = inst.objective.subgradient(x)
        cuts_F.append(s)
        cuts_g.append(fx - s @ x)
        worst = 0.0
        for g in inst.constraints:
            gx = g.evaluate(x)
            worst = max(worst, gx)
            if gx > 0:
                h = g.subgradient(x)
                con_A.append(h)
                con_b.append(h @ x - gx)
        if worst <= 1e-7 and fx < best_f:
            best_x, best_f = x.copy(), fx
        status, x_new, _ = minimax_affine(
            np.array(cuts_F), np.array(cuts_g), lo, hi,
            np.array(con_A) if con_A else None, np.array(con_b) if con_b else None,
            inst.A_eq, inst.b_eq)
        if status != simplex.OPTIMAL:
            # the cuts relax the feasible set, so this is a certificate
            return None, np.inf, k, SolveStatus.INFEASIBLE
        lower = float(np.max(np.array(cuts_F) @ x_new + np.array(cuts_g)))
        if best_x is not None and best_f - lower <= tol * max(1.0, abs(best_f)):
            return best_x, best_f, k, SolveStatus.OPTIMAL
        x = x_new
    return best_x, best_f, max_iter, SolveStatus.MAX_ITERATIONS


def solve_cp(inst: CpInstance, grid: TimeGrid, init=None, tol: float = 1e-10,
             max_iter: int = CP_MAX_ITER) -> SolveResult:
    n = inst.size
    if n != grid.num_slots:
        raise ValueError(f"instance has {n} variables for a {grid.num_slots}-slot grid")
    lo, hi = inst.bounds.x_min, inst.bounds.x_max
    if not box_feasible(n, lo, hi, None, None, inst.A_eq, inst.b_eq):
        return make_result(grid, np.full(n, lo), np.nan, SolveStatus.INFEASIBLE, 0)
    project = Projector.build(lo, hi, None, None, inst.A_eq, inst.b_eq, n=n)
    x0 = _start_point(project, n, init, lo)

    box_lo, box_hi = np.full(n, lo), np.full(n, hi)
    if inst.constraints:
        x, fx, iters, status = _kelley(inst, x0, box_lo, box_hi, 1e-7, min(max_iter, KELLEY_MAX_ITER))
        if x is None:
            return make_result(grid, x0, np.nan, status, iters)
        return make_result(grid, x, fx, status, iters)

    res = accelerated_projected_gradient(inst.objective.evaluate, inst.objective.subgradient,
                                         project, x0, lipschitz=None, tol=tol, max_iter=max_iter)
    if res.converged:
        return make_result(grid, res.x, inst.objective.evaluate(res.x), SolveStatus.OPTIMAL,
                           res.iterations)
    # no convergence usually means a kink in the objective; cutting planes cope with that
    if n <= KELLEY_MAX_DIM:
        x, fx, iters, status = _kelley(inst, res.x, box_lo, box_hi, 1e-7, KELLEY_MAX_ITER)
        if x is not None and fx <= res.fun:
            return make_result(grid, x, fx, status, res.iterations + iters)
    return make_result(grid, res.x, inst.objective.evaluate(res.x), SolveStatus.MAX_ITERATIONS,
                       res.iterations)
