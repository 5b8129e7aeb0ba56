"""One deterministic solver per problem class, plus the dispatcher."""

from chargeplan.solvers.bank import SOLVERS, dispatch
from chargeplan.solvers.control import solve_lmt, solve_lqr
from chargeplan.solvers.convex import solve_cp, solve_qp
from chargeplan.solvers.linear import solve_lp, solve_mm
from chargeplan.solvers.result import NumericalFailure, SolveResult, SolveStatus

__all__ = [
    "SOLVERS", "dispatch", "solve_lp", "solve_qp", "solve_mm", "solve_cp", "solve_lmt",
    "solve_lqr", "SolveResult", "SolveStatus", "NumericalFailure",
]
