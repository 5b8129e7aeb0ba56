"""Euclidean projection onto a box intersected with linear rows.

A single row (equality or ``<=``) plus the box is projected exactly by a
search on the row multiplier. Several rows fall back to Dykstra's
alternating projections over the single-row sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def project_box_row(y, lo, hi, a, b, equality=True):
    """argmin ||x - y|| s.t. lo <= x <= hi and a @ x == b (or <= b).

    Returns None when the row cannot meet the box.
    """
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    x = np.clip(y, lo, hi)
    if not np.any(a):
        return x if (abs(b) <= 1e-12 if equality else b >= -1e-12) else None
    if not equality and a @ x <= b:
        return x

    # a @ clip(y - lam * a) is non-increasing in lam
    def row_value(lam):
        return a @ np.clip(y - lam * a, lo, hi)

    reach_lo = np.sum(np.where(a > 0, a * lo, a * hi))
    reach_hi = np.sum(np.where(a > 0, a * hi, a * lo))
    tol = 1e-12 * max(1.0, abs(b), float(np.abs(a).sum()))
    if b < reach_lo - tol or (equality and b > reach_hi + tol):
        return None
    b_eff = min(max(b, reach_lo), reach_hi)

    # breakpoints where components enter/leave the box
    nz = a != 0
    bps = np.concatenate([(y[nz] - lo[nz]) / a[nz], (y[nz] - hi[nz]) / a[nz]])
    bps = np.unique(bps)
    vals = np.array([row_value(t) for t in bps])
    # vals is non-increasing along bps; find the segment containing b_eff
    if b_eff >= vals[0]:
        lam_lo, lam_hi = bps[0] - 1.0, bps[0]
    elif b_eff <= vals[-1]:
        lam_lo, lam_hi = bps[-1], bps[-1] + 1.0
    else:
        k = int(np.searchsorted(-vals, -b_eff, side="left"))
        lam_lo, lam_hi = bps[k - 1], bps[k]
    # row_value is affine on the segment: solve from the free set at its midpoint
    mid = 0.5 * (lam_lo + lam_hi)
    z = y - mid * a
    free = (z > lo) & (z < hi)
    fixed_val = a[~free] @ np.clip(z, lo, hi)[~free]
    denom = a[free] @ a[free]
    if denom == 0:
        lam = mid
    else:
        lam = (a[free] @ y[free] + fixed_val - b_eff) / denom
    return np.clip(y - lam * a, lo, hi)


@dataclass
class Projector:
    """Projection onto {lo <= x <= hi, A_ub x <= b_ub, A_eq x = b_eq}."""

    lo: np.ndarray
    hi: np.ndarray
    rows: list = field(default_factory=list)  # (a, b, is_equality)
    tol: float = 1e-12
    max_sweeps: int = 20000

    @classmethod
    def build(cls, lo, hi, A_ub=None, b_ub=None, A_eq=None, b_eq=None, n=None):
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
        rows = []
        if A_eq is not None:
            rows += [(np.asarray(a, dtype=float), float(b), True) for a, b in zip(A_eq, b_eq)]
        if A_ub is not None:
            rows += [(np.asarray(a, dtype=float), float(b), False) for a, b in zip(A_ub, b_ub)]
        return cls(lo, hi, rows)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if not self.rows:
            return np.clip(y, self.lo, self.hi)
        if len(self.rows) == 1:
            a, b, eq = self.rows[0]
            return project_box_row(y, self.lo, self.hi, a, b, eq)
        return self._dykstra(y)

    def _dykstra(self, y):
        k = len(self.rows)
        x = y.copy()
        incr = np.zeros((k, y.size))
        for _ in range(self.max_sweeps):
            x_prev = x.copy()
            for i, (a, b, eq) in enumerate(self.rows):
                z = x + incr[i]
                p = project_box_row(z, self.lo, self.hi, a, b, eq)
                if p is None:
                    return None
                incr[i] = z - p
                x = p
            if np.max(np.abs(x - x_prev)) <= self.tol and self.violation(x) <= 1e-10:
                break
        return x

    def violation(self, x) -> float:
        worst = max(float(np.max(self.lo - x, initial=0.0)), float(np.max(x - self.hi, initial=0.0)))
        for a, b, eq in self.rows:
            r = a @ x - b
            worst = max(worst, abs(r) if eq else r)
        return worst
