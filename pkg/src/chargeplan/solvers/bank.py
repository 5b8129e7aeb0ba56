"""Routing of a complete problem to the matching solver."""

from __future__ import annotations

import numpy as np

from chargeplan.model import (CompleteOp, LpInstance, OpClass, PowerSchedule, QpInstance,
                              validate_schedule)
from chargeplan.solvers.control import solve_lmt, solve_lqr
from chargeplan.solvers.convex import solve_cp, solve_qp
from chargeplan.solvers.linear import solve_lp, solve_mm
from chargeplan.solvers.result import SolveResult


def _as_lp(inst: QpInstance) -> LpInstance:
    return LpInstance(c=inst.c, bounds=inst.bounds, A=inst.A, b=inst.b, A_eq=inst.A_eq,
                      b_eq=inst.b_eq)


def _usable_init(op: CompleteOp, init: PowerSchedule | None):
    if init is None or init.grid != op.grid:
        return None
    if not validate_schedule(init, op).feasible:
        return None
    return np.asarray(init.values)


def dispatch(op: CompleteOp, init: PowerSchedule | None = None) -> SolveResult:
    """Solve ``op`` with the solver for its class.

    ``init`` only seeds the iterative QP/CP solvers, and only when it is
    feasible for ``op``; anything else falls back to the projected origin.
    """
    inst, grid = op.instance, op.grid
    cls = op.op_class
    if cls is OpClass.LP:
        return solve_lp(inst, grid)
    if cls is OpClass.MM:
        return solve_mm(inst, grid)
    if cls is OpClass.LMT:
        return solve_lmt(inst, grid)
    if cls is OpClass.LQR:
        return solve_lqr(inst, grid)
    start = _usable_init(op, init)
    if cls is OpClass.QP:
        if not np.any(inst.Q):
            return solve_lp(_as_lp(inst), grid)
        return solve_qp(inst, grid, init=start)
    if cls is OpClass.CP:
        return solve_cp(inst, grid, init=start)
    raise ValueError(f"no solver for {cls!r}")


SOLVERS = {
    OpClass.LP: solve_lp,
    OpClass.QP: solve_qp,
    OpClass.MM: solve_mm,
    OpClass.CP: solve_cp,
    OpClass.LMT: solve_lmt,
    OpClass.LQR: solve_lqr,
}
