"""Minimum-time and finite-horizon LQ solvers for scalar-input linear dynamics."""

from __future__ import annotations

import numpy as np

from chargeplan.model import LmtInstance, LqrInstance, TargetMode, TimeGrid
from chargeplan.solvers import simplex
from chargeplan.solvers.result import NumericalFailure, SolveResult, SolveStatus, make_result


def _input_response(inst: LmtInstance, tau: int):
    """Affine map x[0..tau) -> s[1..tau]: returns (G, h) with s[t] = G[t-1] @ x + h[t-1]."""
    n = inst.state_dim
    G = np.zeros((tau, n, tau))
    h = np.zeros((tau, n))
    s_free = inst.s_init.copy()
    powers = [np.eye(n)]
    for _ in range(tau):
        powers.append(inst.A_dyn @ powers[-1])
    for t in range(1, tau + 1):
        s_free = inst.A_dyn @ s_free
        h[t - 1] = s_free
        for k in range(t):
            G[t - 1, :, k] = powers[t - 1 - k] @ inst.B_dyn
    return G, h


def lmt_feasibility(inst: LmtInstance, tau: int):
    """LP feasibility of reaching the target in exactly ``tau`` slots.

    Among feasible inputs, returns the one minimizing sum_t (t + 1) x[t]:
    the least input, pushed as early as possible. ``None`` if infeasible.
    """
    if tau == 0:
        return np.zeros(0) if inst.reached(inst.s_init) else None
    G, h = _input_response(inst, tau)
    rows, rhs, eq_rows, eq_rhs = [], [], [], []
    for t in range(tau):
        rows.append(G[t])
        rhs.append(inst.s_max - h[t])
        rows.append(-G[t])
        rhs.append(h[t] - inst.s_min)
    final_G, final_h = G[tau - 1], h[tau - 1]
    if inst.mode is TargetMode.EXACT:
        eq_rows.append(final_G)
        eq_rhs.append(inst.s_final - final_h)
    else:
        rows.append(-final_G)
        rhs.append(final_h - inst.s_final)
    A_ub = np.vstack(rows).reshape(-1, tau)
    b_ub = np.concatenate(rhs)
    A_eq = np.vstack(eq_rows).reshape(-1, tau) if eq_rows else None
    b_eq = np.concatenate(eq_rhs) if eq_rhs else None
    weights = np.arange(1, tau + 1, dtype=float)
    res = simplex.linprog_bounded(weights, A_ub, b_ub, A_eq, b_eq,
                                  lo=inst.bounds.x_min, hi=inst.bounds.x_max)
    if res.status != simplex.OPTIMAL:
        return None
    return res.x


def solve_lmt(inst: LmtInstance, grid: TimeGrid) -> SolveResult:
    """Smallest tau for which the target is reachable, by scanning tau upward.

    A plain scan (rather than bisection) keeps minimality exact even when
    feasibility is not monotone in tau, which happens with drifting dynamics
    or a non-zero minimum input.
    """
    T = grid.num_slots
    limit = min(inst.max_horizon, T)
    unreachable = np.any(inst.s_final > inst.s_max) or (
        inst.mode is TargetMode.EXACT and np.any(inst.s_final < inst.s_min))
    if unreachable:
        return make_result(grid, np.zeros(T), np.nan, SolveStatus.INFEASIBLE, 0)
    for tau in range(0, limit + 1):
        x = lmt_feasibility(inst, tau)
        if x is None:
            continue
        # beyond tau the charger idles at its floor
        full = np.concatenate([x, np.full(T - tau, inst.bounds.x_min)])
        traj = inst.rollout(full)
        return make_result(grid, full, float(tau), SolveStatus.OPTIMAL, tau + 1, tau=tau,
                           trajectory=traj)
    return make_result(grid, np.full(T, inst.bounds.x_min), np.nan, SolveStatus.INFEASIBLE,
                       limit + 1)


def riccati_gains(inst: LqrInstance):
    """Backward recursion; returns (gains K[0..N), cost-to-go P[0..N])."""
    A, B = inst.A_dyn, inst.B_dyn.reshape(-1, 1)
    N = inst.horizon
    P = [None] * (N + 1)
    K = [None] * N
    P[N] = inst.Q_final.copy()
    for t in range(N - 1, -1, -1):
        Pn = P[t + 1]
        denom = inst.r + (B.T @ Pn @ B).item()
        K[t] = (B.T @ Pn @ A) / denom  # shape (1, n)
        Pt = inst.Q_state + A.T @ Pn @ A - (A.T @ Pn @ B) @ K[t]
        asym = float(np.max(np.abs(Pt - Pt.T)))
        if asym > 1e-6 * max(1.0, float(np.max(np.abs(Pt)))):
            raise NumericalFailure(f"Riccati iterate lost symmetry at t={t} ({asym:.2e})")
        P[t] = 0.5 * (Pt + Pt.T)
    return [k.ravel() for k in K], P


def lqr_cost(inst: LqrInstance, x) -> tuple[float, np.ndarray]:
    """Realized cost of the first ``horizon`` inputs of ``x`` and the trajectory."""
    s = np.empty((inst.horizon + 1, inst.state_dim))
    s[0] = inst.s0
    cost = 0.0
    for t in range(inst.horizon):
        cost += float(s[t] @ inst.Q_state @ s[t]) + inst.r * float(x[t]) ** 2
        s[t + 1] = inst.A_dyn @ s[t] + inst.B_dyn * x[t]
    cost += float(s[-1] @ inst.Q_final @ s[-1])
    return cost, s


def solve_lqr(inst: LqrInstance, grid: TimeGrid) -> SolveResult:
    """Riccati feedback, saturated per step to the power bounds.

    The clamp makes this an approximation once the bounds bind; the reported
    objective is the realized cost of the clamped trajectory.
    """
    T = grid.num_slots
    N = inst.horizon
    if N > T:
        raise ValueError(f"horizon {N} exceeds the {T}-slot grid")
    K, _ = riccati_gains(inst)
    lo, hi = inst.bounds.x_min, inst.bounds.x_max
    x = np.full(T, lo)
    s = inst.s0.copy()
    for t in range(N):
        x[t] = min(max(-float(K[t] @ s), lo), hi)
        s = inst.A_dyn @ s + inst.B_dyn * x[t]
    cost, traj = lqr_cost(inst, x)
    return make_result(grid, x, cost, SolveStatus.OPTIMAL, N, trajectory=traj,
                       gains=np.array(K))
