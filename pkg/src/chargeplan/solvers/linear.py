"""LP and affine min-max solvers, both on top of the bounded simplex."""

from __future__ import annotations

import numpy as np

from chargeplan.model import LpInstance, MmInstance, TimeGrid
from chargeplan.solvers import simplex
from chargeplan.solvers.result import SolveResult, SolveStatus, make_result

_STATUS = {
    simplex.OPTIMAL: SolveStatus.OPTIMAL,
    simplex.INFEASIBLE: SolveStatus.INFEASIBLE,
    simplex.UNBOUNDED: SolveStatus.UNBOUNDED,
    simplex.MAX_ITERATIONS: SolveStatus.MAX_ITERATIONS,
}


def _check_size(n, grid):
    if n != grid.num_slots:
        raise ValueError(f"instance has {n} variables for a {grid.num_slots}-slot grid")


def solve_lp(inst: LpInstance, grid: TimeGrid) -> SolveResult:
    n = inst.size
    _check_size(n, grid)
    res = simplex.linprog_bounded(inst.c, inst.A, inst.b, inst.A_eq, inst.b_eq,
                                  lo=inst.bounds.x_min, hi=inst.bounds.x_max)
    return make_result(grid, res.x, res.fun, _STATUS[res.status], res.iterations)


def box_feasible(n, lo, hi, A=None, b=None, A_eq=None, b_eq=None) -> bool:
    """Whether the box and linear rows admit any point (phase-one check)."""
    res = simplex.linprog_bounded(np.zeros(n), A, b, A_eq, b_eq, lo=lo, hi=hi)
    return res.status == simplex.OPTIMAL


def _pad(M, extra):
    if M is None:
        return None
    return np.hstack([M, np.full((M.shape[0], 1), extra)])


def minimax_affine(F, g, lo, hi, A=None, b=None, A_eq=None, b_eq=None):
    """min_x max_i F[i] @ x + g[i] via the epigraph LP in (x, level).

    The level variable is boxed by [max_i min_box f_i, max_i max_box f_i],
    which always contains the optimal level. A second LP then minimizes
    sum_i f_i(x) with the level pinned, so ties resolve deterministically
    towards the least total (for peak shaving: the least energy).
    """
    F = np.asarray(F, dtype=float)
    g = np.asarray(g, dtype=float)
    n = F.shape[1]
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,))
    comp_min = np.where(F > 0, F * lo, F * hi).sum(axis=1) + g
    comp_max = np.where(F > 0, F * hi, F * lo).sum(axis=1) + g
    lev_lo, lev_hi = float(comp_min.max()), float(comp_max.max())

    rows = [np.hstack([F, -np.ones((F.shape[0], 1))])]
    rhs = [-g]
    if A is not None:
        rows.append(_pad(A, 0.0))
        rhs.append(np.asarray(b, dtype=float))
    A_ub = np.vstack(rows)
    b_ub = np.concatenate(rhs)
    A_eq2 = _pad(A_eq, 0.0)
    c = np.zeros(n + 1)
    c[-1] = 1.0
    lo2 = np.append(lo, lev_lo)
    hi2 = np.append(hi, lev_hi)
    first = simplex.linprog_bounded(c, A_ub, b_ub, A_eq2, b_eq, lo=lo2, hi=hi2)
    if first.status != simplex.OPTIMAL:
        return first.status, first.x[:n], first.iterations
    level = first.x[-1]
    iterations = first.iterations
    A2 = np.vstack([F] + ([A] if A is not None else []))
    extra_b = [np.asarray(b, dtype=float)] if A is not None else []
    for slack in (0.0, 1e-9 * max(1.0, abs(level))):
        second = simplex.linprog_bounded(F.sum(axis=0), A2,
                                         np.concatenate([level + slack - g] + extra_b),
                                         A_eq, b_eq, lo=lo, hi=hi)
        iterations += second.iterations
        if second.status == simplex.OPTIMAL:
            return simplex.OPTIMAL, second.x, iterations
    return simplex.OPTIMAL, first.x[:n], iterations


def solve_mm(inst: MmInstance, grid: TimeGrid) -> SolveResult:
    n = inst.size
    _check_size(n, grid)
    status, x, iters = minimax_affine(inst.F, inst.g, inst.bounds.x_min, inst.bounds.x_max,
                                      inst.A, inst.b, inst.A_eq, inst.b_eq)
    # objective re-evaluated on the returned point, never taken from the LP level
    return make_result(grid, x, inst.objective(x), _STATUS[status], iters)
