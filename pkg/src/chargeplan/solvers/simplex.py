"""Bounded-variable primal simplex (two phases, Bland's rule).

Solves

    minimize c @ x  s.t.  A_ub @ x <= b_ub,  A_eq @ x = b_eq,  lo <= x <= hi

on a dense tableau. Every structural variable must have finite bounds;
slacks are the only variables allowed an infinite upper bound. Sized for
the desk-scale problems of this package (a few hundred columns at most).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERATIONS = "max_iterations"

_PIVOT_TOL = 1e-9
_FEAS_TOL = 1e-9


@dataclass
class LinprogResult:
    status: str
    x: np.ndarray
    fun: float
    iterations: int


def _as_rows(A, n):
    if A is None:
        return np.zeros((0, n))
    return np.asarray(A, dtype=float).reshape(-1, n)


class _Tableau:
    def __init__(self, M, rhs, upper, basis):
        self.T = M.copy()  # B^-1 A
        self.xB = rhs.copy()  # basic variable values
        self.upper = upper
        self.basis = list(basis)
        self.at_upper = np.zeros(M.shape[1], dtype=bool)
        self.is_basic = np.zeros(M.shape[1], dtype=bool)
        self.is_basic[self.basis] = True

    def pivot(self, row, col):
        piv = self.T[row, col]
        self.T[row] /= piv
        others = self.T[:, col].copy()
        others[row] = 0.0
        self.T -= np.outer(others, self.T[row])
        self.is_basic[self.basis[row]] = False
        self.basis[row] = col
        self.is_basic[col] = True

    def values(self):
        z = np.where(self.at_upper, self.upper, 0.0)
        z[~np.isfinite(z)] = 0.0
        z[self.basis] = self.xB
        return z

    def iterate(self, cost, max_iter, dual_tol, frozen=()):
        """Run primal simplex iterations for ``cost``; returns (status, iterations)."""
        n = self.T.shape[1]
        frozen_mask = np.zeros(n, dtype=bool)
        frozen_mask[list(frozen)] = True
        for it in range(max_iter):
            d = cost - cost[self.basis] @ self.T
            eligible = (~self.is_basic) & (~frozen_mask) & (
                ((~self.at_upper) & (d < -dual_tol) & (self.upper > 0))
                | (self.at_upper & (d > dual_tol)))
            cand = np.flatnonzero(eligible)
            if cand.size == 0:
                return OPTIMAL, it
            j = int(cand[0])  # Bland: lowest index
            direction = -1.0 if self.at_upper[j] else 1.0
            rate = -direction * self.T[:, j]  # d xB / d theta

            theta = self.upper[j]
            leave_row, leave_to_upper = -1, False
            best_var = None
            for i in range(len(self.basis)):
                if rate[i] < -_PIVOT_TOL:
                    lim = max(self.xB[i], 0.0) / -rate[i]
                    to_upper = False
                elif rate[i] > _PIVOT_TOL and np.isfinite(self.upper[self.basis[i]]):
                    lim = max(self.upper[self.basis[i]] - self.xB[i], 0.0) / rate[i]
                    to_upper = True
                else:
                    continue
                var = self.basis[i]
                if lim < theta - 1e-12 or (
                    lim <= theta + 1e-12 and leave_row >= 0 and var < best_var
                ):
                    theta, leave_row, leave_to_upper, best_var = lim, i, to_upper, var
            if not np.isfinite(theta):
                return UNBOUNDED, it

            self.xB += rate * theta
            if leave_row < 0:
                self.at_upper[j] = not self.at_upper[j]
                continue
            entering_value = (self.upper[j] if self.at_upper[j] else 0.0) + direction * theta
            leaving = self.basis[leave_row]
            self.pivot(leave_row, j)
            self.xB[leave_row] = entering_value
            self.at_upper[leaving] = leave_to_upper
            self.at_upper[j] = False
        return MAX_ITERATIONS, max_iter


def linprog_bounded(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, lo=None, hi=None,
                    max_iter: int | None = None) -> LinprogResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    lo = np.zeros(n) if lo is None else np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("all variables need finite bounds")
    A_ub = _as_rows(A_ub, n)
    A_eq = _as_rows(A_eq, n)
    b_ub = np.zeros(0) if b_ub is None else np.atleast_1d(np.asarray(b_ub, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.atleast_1d(np.asarray(b_eq, dtype=float))
    if np.any(hi < lo - _FEAS_TOL):
        return LinprogResult(INFEASIBLE, lo.copy(), float(c @ lo), 0)
    hi = np.maximum(hi, lo)

    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq
    # shift x = lo + y, y in [0, hi - lo]
    rhs = np.concatenate([b_ub - A_ub @ lo, b_eq - A_eq @ lo])
    rows = np.vstack([A_ub, A_eq]) if m else np.zeros((0, n))
    slack = np.vstack([np.eye(m_ub), np.zeros((m_eq, m_ub))]) if m else np.zeros((0, 0))
    sign = np.where(rhs < 0, -1.0, 1.0)
    rows = rows * sign[:, None]
    slack = slack * sign[:, None]
    rhs = rhs * sign

    # rows whose slack already sits at +1 start with the slack basic
    needs_art = [i for i in range(m) if not (i < m_ub and sign[i] > 0)]
    n_art = len(needs_art)
    art = np.zeros((m, n_art))
    for k, i in enumerate(needs_art):
        art[i, k] = 1.0
    M = np.hstack([rows, slack, art])
    N = n + m_ub + n_art
    upper = np.concatenate([hi - lo, np.full(m_ub, np.inf), np.full(n_art, np.inf)])
    art_cols = list(range(n + m_ub, N))
    basis = []
    k = 0
    for i in range(m):
        if i in needs_art:
            basis.append(art_cols[k])
            k += 1
        else:
            basis.append(n + i)
    if max_iter is None:
        max_iter = 50 * (m + N) + 1000

    tab = _Tableau(M, rhs, upper, basis)
    iterations = 0
    if n_art:
        cost1 = np.zeros(N)
        cost1[art_cols] = 1.0
        status, it = tab.iterate(cost1, max_iter, 1e-11)
        iterations += it
        if status == MAX_ITERATIONS:
            z = tab.values()
            return LinprogResult(MAX_ITERATIONS, lo + z[:n], float(c @ (lo + z[:n])), iterations)
        infeas = float(tab.values()[art_cols].sum())
        if infeas > _FEAS_TOL * max(1.0, float(np.abs(rhs).max(initial=0.0))):
            z = tab.values()
            return LinprogResult(INFEASIBLE, lo + z[:n], float(c @ (lo + z[:n])), iterations)
        # drive zero-level artificials out of the basis where possible
        for row in range(m):
            if tab.basis[row] in art_cols:
                for j in range(n + m_ub):
                    if not tab.is_basic[j] and abs(tab.T[row, j]) > 1e-7:
                        value = tab.upper[j] if tab.at_upper[j] else 0.0
                        tab.pivot(row, j)
                        tab.xB[row] = value
                        tab.at_upper[j] = False
                        break
        upper[art_cols] = 0.0
        tab.upper = upper

    cost2 = np.concatenate([c, np.zeros(m_ub + n_art)])
    scale = float(np.abs(c).max(initial=0.0))
    status, it = tab.iterate(cost2, max_iter, 1e-9 * scale if scale > 0 else np.inf,
                             frozen=art_cols)
    iterations += it
    z = tab.values()
    x = np.clip(lo + z[:n], lo, hi)
    return LinprogResult(status, x, float(c @ x), iterations)
