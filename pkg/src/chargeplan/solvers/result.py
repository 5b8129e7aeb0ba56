from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from chargeplan.model import PowerSchedule, TimeGrid


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"
    UNBOUNDED = "unbounded"


class NumericalFailure(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class SolveResult:
    schedule: PowerSchedule
    objective_value: float
    status: SolveStatus
    iterations: int
    aux: dict[str, Any] = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL

    def to_dict(self) -> dict:
        out = {"status": self.status.value,
               "objective": _json_float(self.objective_value),
               "iterations": self.iterations,
               "schedule": self.schedule.values.tolist()}
        if "tau" in self.aux:
            out["tau"] = int(self.aux["tau"])
        if "trajectory" in self.aux:
            out["trajectory"] = np.asarray(self.aux["trajectory"]).tolist()
        return out


def _json_float(v):
    v = float(v)
    return v if np.isfinite(v) else None


def make_result(grid: TimeGrid, x, objective, status, iterations, **aux) -> SolveResult:
    return SolveResult(PowerSchedule(grid, np.asarray(x, dtype=float)), float(objective),
                       SolveStatus(status), int(iterations), dict(aux))
