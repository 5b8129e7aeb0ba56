"""Domain types shared by every stage: time grid, schedules, environment
snapshot, metric/class taxonomy and the six problem-instance types."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

import numpy as np

DEFAULT_TOL = 1e-6


class ModelError(ValueError):
    pass


class DimensionMismatch(ModelError):
    pass


class TargetBelowCurrent(ModelError):
    pass


class TargetAboveMax(ModelError):
    pass


def _frozen_array(values, ndim: int | None = None, name: str = "array") -> np.ndarray:
    arr = np.array(values, dtype=float)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, 0)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionMismatch(f"{name}: expected {ndim}-d, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _opt_array(values, ndim: int, name: str) -> np.ndarray | None:
    if values is None:
        return None
    return _frozen_array(values, ndim, name)


def _to_list(arr: np.ndarray | None):
    return None if arr is None else arr.tolist()


# ---------------------------------------------------------------- time & power


@dataclass(frozen=True)
class TimeGrid:
    start: datetime
    delta_t: float  # hours
    num_slots: int

    def __post_init__(self):
        if not self.delta_t > 0:
            raise ModelError("delta_t must be positive")
        if int(self.num_slots) != self.num_slots or self.num_slots < 1:
            raise ModelError("num_slots must be a positive integer")
        object.__setattr__(self, "start", self.start.replace(second=0, microsecond=0))

    @property
    def end(self) -> datetime:
        return self.start + timedelta(hours=self.delta_t * self.num_slots)

    def slot_start(self, k: int) -> datetime:
        return self.start + timedelta(hours=self.delta_t * k)

    def to_dict(self) -> dict:
        return {"start": self.start.isoformat(timespec="minutes"),
                "delta_t": self.delta_t, "num_slots": self.num_slots}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TimeGrid":
        return cls(datetime.fromisoformat(d["start"]), float(d["delta_t"]), int(d["num_slots"]))


@dataclass(frozen=True)
class PowerBounds:
    x_min: float
    x_max: float

    def __post_init__(self):
        object.__setattr__(self, "x_min", float(self.x_min))
        object.__setattr__(self, "x_max", float(self.x_max))
        if not (0 <= self.x_min <= self.x_max) or not math.isfinite(self.x_max):
            raise ModelError(f"invalid power bounds [{self.x_min}, {self.x_max}]")

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PowerBounds":
        return cls(float(d["x_min"]), float(d["x_max"]))


@dataclass(frozen=True, eq=False)
class PowerSchedule:
    grid: TimeGrid
    values: np.ndarray  # kW per slot

    def __post_init__(self):
        vals = _frozen_array(self.values, 1, "schedule")
        if vals.size != self.grid.num_slots:
            raise DimensionMismatch(
                f"schedule has {vals.size} values for {self.grid.num_slots} slots")
        if not np.all(np.isfinite(vals)):
            raise ModelError("schedule values must be finite")
        object.__setattr__(self, "values", vals)

    def __eq__(self, other):
        return (isinstance(other, PowerSchedule) and self.grid == other.grid
                and np.array_equal(self.values, other.values))

    @property
    def energy(self) -> float:
        return float(self.values.sum() * self.grid.delta_t)

    def to_dict(self) -> dict:
        return {"grid": self.grid.to_dict(), "values": self.values.tolist()}


# ---------------------------------------------------------------- environment


@dataclass(frozen=True, eq=False)
class EnvironmentSnapshot:
    """What the smart meter exposes: tariff, household load, charger limit
    and battery state over a fixed data horizon."""

    grid: TimeGrid
    prices: np.ndarray
    non_flexible_load: np.ndarray
    bounds: PowerBounds
    battery_capacity_kwh: float
    soc_init: float
    soc_min: float
    soc_max: float
    efficiency: float
    reference_clock: datetime

    def __post_init__(self):
        n = self.grid.num_slots
        for name in ("prices", "non_flexible_load"):
            arr = _frozen_array(getattr(self, name), 1, name)
            if arr.size != n:
                raise DimensionMismatch(f"{name} has {arr.size} entries, expected {n}")
            if np.any(arr < 0):
                raise ModelError(f"{name} must be non-negative")
            object.__setattr__(self, name, arr)
        if not (0 <= self.soc_min <= self.soc_init <= self.soc_max <= 1):
            raise ModelError("need 0 <= soc_min <= soc_init <= soc_max <= 1")
        if not (0 < self.efficiency <= 1):
            raise ModelError("efficiency must lie in (0, 1]")
        if not self.battery_capacity_kwh > 0:
            raise ModelError("battery capacity must be positive")

    @property
    def p_max(self) -> float:
        return self.bounds.x_max

    def slot_index(self, when: datetime) -> int:
        """Index of the slot containing ``when`` (floor)."""
        hours = (when - self.grid.start).total_seconds() / 3600.0
        return math.floor(hours / self.grid.delta_t + 1e-9)

    def to_dict(self) -> dict:
        return {
            "start": self.grid.start.isoformat(timespec="minutes"),
            "delta_t": self.grid.delta_t,
            "num_slots": self.grid.num_slots,
            "prices": self.prices.tolist(),
            "non_flexible_load": self.non_flexible_load.tolist(),
            "x_min": self.bounds.x_min,
            "x_max": self.bounds.x_max,
            "battery_capacity_kwh": self.battery_capacity_kwh,
            "soc_init": self.soc_init,
            "soc_min": self.soc_min,
            "soc_max": self.soc_max,
            "efficiency": self.efficiency,
            "reference_clock": self.reference_clock.isoformat(timespec="minutes"),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EnvironmentSnapshot":
        missing = {"start", "delta_t", "num_slots", "prices", "non_flexible_load", "x_min",
                   "x_max", "battery_capacity_kwh", "soc_init", "soc_min", "soc_max",
                   "efficiency", "reference_clock"} - set(d)
        if missing:
            raise ModelError(f"environment file missing keys: {sorted(missing)}")
        return cls(
            grid=TimeGrid(datetime.fromisoformat(d["start"]), float(d["delta_t"]), int(d["num_slots"])),
            prices=d["prices"],
            non_flexible_load=d["non_flexible_load"],
            bounds=PowerBounds(float(d["x_min"]), float(d["x_max"])),
            battery_capacity_kwh=float(d["battery_capacity_kwh"]),
            soc_init=float(d["soc_init"]),
            soc_min=float(d["soc_min"]),
            soc_max=float(d["soc_max"]),
            efficiency=float(d["efficiency"]),
            reference_clock=datetime.fromisoformat(d["reference_clock"]),
        )


def load_environment(path: str | Path) -> EnvironmentSnapshot:
    with open(path, encoding="utf-8") as fh:
        return EnvironmentSnapshot.from_dict(json.load(fh))


def energy_requirement(soc_target: float, env: EnvironmentSnapshot) -> float:
    """Grid-side energy (kWh) needed to lift the battery from ``soc_init``
    to ``soc_target``, accounting for charger efficiency."""
    if soc_target < env.soc_init:
        raise TargetBelowCurrent(f"target {soc_target} below current SoC {env.soc_init}")
    if soc_target > env.soc_max:
        raise TargetAboveMax(f"target {soc_target} above soc_max {env.soc_max}")
    return (soc_target - env.soc_init) * env.battery_capacity_kwh / env.efficiency


# ---------------------------------------------------------------- taxonomy


class PerformanceMetric(str, Enum):
    CC = "CC"  # charging cost
    CT = "CT"  # charging time
    EI = "EI"  # environmental impact
    PP = "PP"  # power peak
    PV = "PV"  # power variations
    GD = "GD"  # grid damage


class OpClass(str, Enum):
    LP = "LP"
    QP = "QP"
    MM = "MM"
    CP = "CP"
    LMT = "LMT"
    LQR = "LQR"


METRIC_TO_OP: dict[PerformanceMetric, OpClass] = {
    PerformanceMetric.CC: OpClass.LP,
    PerformanceMetric.CT: OpClass.LMT,
    PerformanceMetric.PP: OpClass.MM,
    PerformanceMetric.PV: OpClass.QP,
    PerformanceMetric.GD: OpClass.CP,
}
OP_TO_METRIC: dict[OpClass, PerformanceMetric] = {v: k for k, v in METRIC_TO_OP.items()}
MAPPED_METRICS: tuple[PerformanceMetric, ...] = tuple(METRIC_TO_OP)


def op_for_metric(metric: PerformanceMetric) -> OpClass | None:
    return METRIC_TO_OP.get(PerformanceMetric(metric))


def metric_for_op(op: OpClass) -> PerformanceMetric | None:
    return OP_TO_METRIC.get(OpClass(op))


def parse_op_classes(text: str | Sequence[str]) -> tuple[OpClass, ...]:
    """``"LP,LMT,MM"`` -> ordered, de-duplicated tuple of classes."""
    items = text.split(",") if isinstance(text, str) else list(text)
    out: list[OpClass] = []
    for item in items:
        item = str(item).strip().upper()
        if not item:
            continue
        op = OpClass(item)
        if op not in out:
            out.append(op)
    if not out:
        raise ModelError("empty class list")
    return tuple(out)


# ---------------------------------------------------------------- instances


def _check_system(A, b, n, name):
    if (A is None) != (b is None):
        raise DimensionMismatch(f"{name}: matrix and rhs must be given together")
    if A is None:
        return
    if A.shape[1:] != (n,) and A.size:
        raise DimensionMismatch(f"{name}: matrix has {A.shape[1]} columns, expected {n}")
    if A.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"{name}: {A.shape[0]} rows but {b.shape[0]} rhs entries")


class _LinearSystemMixin:
    """Shared handling of the optional ``A x <= b`` and ``A_eq x = b_eq`` rows."""

    def _init_systems(self, n: int):
        for mat, rhs in (("A", "b"), ("A_eq", "b_eq")):
            object.__setattr__(self, mat, _opt_array(getattr(self, mat), 2, mat))
            object.__setattr__(self, rhs, _opt_array(getattr(self, rhs), 1, rhs))
            _check_system(getattr(self, mat), getattr(self, rhs), n, mat)

    def _systems_dict(self) -> dict:
        return {"A": _to_list(self.A), "b": _to_list(self.b),
                "A_eq": _to_list(self.A_eq), "b_eq": _to_list(self.b_eq)}


@dataclass(frozen=True, eq=False)
class LpInstance(_LinearSystemMixin):
    c: np.ndarray
    bounds: PowerBounds
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    op_class = OpClass.LP

    def __post_init__(self):
        object.__setattr__(self, "c", _frozen_array(self.c, 1, "c"))
        self._init_systems(self.c.size)

    @property
    def size(self) -> int:
        return self.c.size

    def to_dict(self) -> dict:
        return {"c": self.c.tolist(), **self._systems_dict(), "bounds": self.bounds.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LpInstance":
        return cls(c=d["c"], bounds=PowerBounds.from_dict(d["bounds"]), A=d.get("A"),
                   b=d.get("b"), A_eq=d.get("A_eq"), b_eq=d.get("b_eq"))


@dataclass(frozen=True, eq=False)
class QpInstance(_LinearSystemMixin):
    Q: np.ndarray
    c: np.ndarray
    bounds: PowerBounds
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    op_class = OpClass.QP

    def __post_init__(self):
        Q = _frozen_array(self.Q, 2, "Q")
        c = _frozen_array(self.c, 1, "c")
        if Q.shape != (c.size, c.size):
            raise DimensionMismatch(f"Q has shape {Q.shape}, expected {(c.size, c.size)}")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-9):
            raise ModelError("Q must be symmetric")
        if c.size and np.linalg.eigvalsh(Q).min() < -1e-9:
            raise ModelError("Q must be positive semidefinite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)
        self._init_systems(c.size)

    @property
    def size(self) -> int:
        return self.c.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.c @ x)

    def to_dict(self) -> dict:
        return {"Q": self.Q.tolist(), "c": self.c.tolist(), **self._systems_dict(),
                "bounds": self.bounds.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "QpInstance":
        return cls(Q=d["Q"], c=d["c"], bounds=PowerBounds.from_dict(d["bounds"]), A=d.get("A"),
                   b=d.get("b"), A_eq=d.get("A_eq"), b_eq=d.get("b_eq"))


@dataclass(frozen=True, eq=False)
class MmInstance(_LinearSystemMixin):
    """minimize max_i (F[i] @ x + g[i]) over the box and linear rows."""

    F: np.ndarray
    g: np.ndarray
    bounds: PowerBounds
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    op_class = OpClass.MM

    def __post_init__(self):
        F = _frozen_array(self.F, 2, "F")
        g = _frozen_array(self.g, 1, "g")
        if F.shape[0] != g.size or g.size < 1:
            raise DimensionMismatch("F must have one row per offset, at least one row")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "g", g)
        self._init_systems(F.shape[1])

    @property
    def size(self) -> int:
        return self.F.shape[1]

    def components(self, x) -> np.ndarray:
        return self.F @ np.asarray(x, dtype=float) + self.g

    def objective(self, x) -> float:
        return float(np.max(self.components(x)))

    def to_dict(self) -> dict:
        return {"F": self.F.tolist(), "g": self.g.tolist(), **self._systems_dict(),
                "bounds": self.bounds.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MmInstance":
        return cls(F=d["F"], g=d["g"], bounds=PowerBounds.from_dict(d["bounds"]), A=d.get("A"),
                   b=d.get("b"), A_eq=d.get("A_eq"), b_eq=d.get("b_eq"))


# ---- convex oracles for the CP class


class ConvexOracle(Protocol):
    def evaluate(self, x: np.ndarray) -> float: ...

    def subgradient(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class PowerSum:
    """sum_t w_t * (x_t + offset_t) ** exponent, for exponent >= 1 on x + offset >= 0."""

    offset: np.ndarray
    exponent: float
    weights: np.ndarray | None = None

    kind = "power_sum"

    def __post_init__(self):
        object.__setattr__(self, "offset", _frozen_array(self.offset, 1, "offset"))
        if self.weights is not None:
            object.__setattr__(self, "weights", _frozen_array(self.weights, 1, "weights"))
        if not self.exponent >= 1:
            raise ModelError("exponent must be >= 1 for convexity")

    def _w(self):
        return np.ones_like(self.offset) if self.weights is None else self.weights

    def evaluate(self, x) -> float:
        y = np.maximum(np.asarray(x, dtype=float) + self.offset, 0.0)
        return float(np.sum(self._w() * y ** self.exponent))

    def subgradient(self, x) -> np.ndarray:
        y = np.maximum(np.asarray(x, dtype=float) + self.offset, 0.0)
        return self._w() * self.exponent * y ** (self.exponent - 1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "offset": self.offset.tolist(), "exponent": self.exponent,
                "weights": _to_list(self.weights)}


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """0.5 x'Px + q'x + r with P positive semidefinite."""

    P: np.ndarray
    q: np.ndarray
    r: float = 0.0

    kind = "quadratic"

    def __post_init__(self):
        object.__setattr__(self, "P", _frozen_array(self.P, 2, "P"))
        object.__setattr__(self, "q", _frozen_array(self.q, 1, "q"))

    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.q @ x + self.r)

    def subgradient(self, x) -> np.ndarray:
        return self.P @ np.asarray(x, dtype=float) + self.q

    def to_dict(self) -> dict:
        return {"kind": self.kind, "P": self.P.tolist(), "q": self.q.tolist(), "r": self.r}


@dataclass(frozen=True, eq=False)
class AbsSum:
    """sum_t w_t |x_t - center_t|; non-smooth."""

    center: np.ndarray
    weights: np.ndarray

    kind = "abs_sum"

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen_array(self.center, 1, "center"))
        object.__setattr__(self, "weights", _frozen_array(self.weights, 1, "weights"))

    def evaluate(self, x) -> float:
        return float(np.sum(self.weights * np.abs(np.asarray(x, dtype=float) - self.center)))

    def subgradient(self, x) -> np.ndarray:
        return self.weights * np.sign(np.asarray(x, dtype=float) - self.center)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": self.center.tolist(), "weights": self.weights.tolist()}


_ORACLE_KINDS = {"power_sum": PowerSum, "quadratic": QuadraticForm, "abs_sum": AbsSum}


def oracle_from_dict(d: Mapping):
    d = dict(d)
    kind = d.pop("kind")
    try:
        return _ORACLE_KINDS[kind](**d)
    except KeyError:
        raise ModelError(f"unknown oracle kind {kind!r}") from None


def _oracle_to_dict(o) -> dict:
    if not hasattr(o, "to_dict"):
        raise ModelError(f"oracle {type(o).__name__} is not serializable")
    return o.to_dict()


@dataclass(frozen=True, eq=False)
class CpInstance:
    objective: Any  # ConvexOracle
    size: int
    bounds: PowerBounds
    constraints: tuple = ()  # ConvexOracle each, g_i(x) <= 0
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    op_class = OpClass.CP

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "A_eq", _opt_array(self.A_eq, 2, "A_eq"))
        object.__setattr__(self, "b_eq", _opt_array(self.b_eq, 1, "b_eq"))
        _check_system(self.A_eq, self.b_eq, self.size, "A_eq")

    def to_dict(self) -> dict:
        return {"objective": _oracle_to_dict(self.objective), "size": self.size,
                "constraints": [_oracle_to_dict(g) for g in self.constraints],
                "A_eq": _to_list(self.A_eq), "b_eq": _to_list(self.b_eq),
                "bounds": self.bounds.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CpInstance":
        return cls(objective=oracle_from_dict(d["objective"]), size=int(d["size"]),
                   bounds=PowerBounds.from_dict(d["bounds"]),
                   constraints=tuple(oracle_from_dict(g) for g in d.get("constraints", ())),
                   A_eq=d.get("A_eq"), b_eq=d.get("b_eq"))


class TargetMode(str, Enum):
    EXACT = "exact"
    AT_LEAST = "at-least"


@dataclass(frozen=True, eq=False)
class LmtInstance:
    """Reach ``s_final`` in as few slots as possible under
    s[t+1] = A_dyn s[t] + B_dyn x[t]."""

    A_dyn: np.ndarray
    B_dyn: np.ndarray
    s_init: np.ndarray
    s_final: np.ndarray
    s_min: np.ndarray
    s_max: np.ndarray
    bounds: PowerBounds
    max_horizon: int
    mode: TargetMode = TargetMode.AT_LEAST

    op_class = OpClass.LMT

    def __post_init__(self):
        s_init = _frozen_array(np.atleast_1d(self.s_init), 1, "s_init")
        n = s_init.size
        object.__setattr__(self, "s_init", s_init)
        object.__setattr__(self, "A_dyn", _frozen_array(np.reshape(self.A_dyn, (n, n)), 2, "A_dyn"))
        object.__setattr__(self, "B_dyn", _frozen_array(np.reshape(self.B_dyn, (n,)), 1, "B_dyn"))
        for name in ("s_final", "s_min", "s_max"):
            arr = _frozen_array(np.atleast_1d(getattr(self, name)), 1, name)
            if arr.size != n:
                raise DimensionMismatch(f"{name} has {arr.size} entries, expected {n}")
            object.__setattr__(self, name, arr)
        if np.any(self.s_min > s_init) or np.any(s_init > self.s_max):
            raise ModelError("s_init outside the state box")
        if int(self.max_horizon) != self.max_horizon or self.max_horizon < 1:
            raise ModelError("max_horizon must be a positive integer")
        object.__setattr__(self, "mode", TargetMode(self.mode))

    @property
    def state_dim(self) -> int:
        return self.s_init.size

    def rollout(self, x) -> np.ndarray:
        """State trajectory s[0..len(x)]."""
        s = np.empty((len(x) + 1, self.state_dim))
        s[0] = self.s_init
        for t, xt in enumerate(x):
            s[t + 1] = self.A_dyn @ s[t] + self.B_dyn * xt
        return s

    def reached(self, s, tol: float = DEFAULT_TOL) -> bool:
        if self.mode is TargetMode.EXACT:
            return bool(np.all(np.abs(s - self.s_final) <= tol))
        return bool(np.all(s >= self.s_final - tol))

    def to_dict(self) -> dict:
        return {"A_dyn": self.A_dyn.tolist(), "B_dyn": self.B_dyn.tolist(),
                "s_init": self.s_init.tolist(), "s_final": self.s_final.tolist(),
                "s_min": self.s_min.tolist(), "s_max": self.s_max.tolist(),
                "bounds": self.bounds.to_dict(), "max_horizon": self.max_horizon,
                "mode": self.mode.value}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LmtInstance":
        return cls(A_dyn=d["A_dyn"], B_dyn=d["B_dyn"], s_init=d["s_init"], s_final=d["s_final"],
                   s_min=d["s_min"], s_max=d["s_max"], bounds=PowerBounds.from_dict(d["bounds"]),
                   max_horizon=int(d["max_horizon"]), mode=TargetMode(d.get("mode", "at-least")))


@dataclass(frozen=True, eq=False)
class LqrInstance:
    A_dyn: np.ndarray
    B_dyn: np.ndarray
    Q_state: np.ndarray
    Q_final: np.ndarray
    r: float
    horizon: int
    s0: np.ndarray
    bounds: PowerBounds

    op_class = OpClass.LQR

    def __post_init__(self):
        s0 = _frozen_array(np.atleast_1d(self.s0), 1, "s0")
        n = s0.size
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "A_dyn", _frozen_array(np.reshape(self.A_dyn, (n, n)), 2, "A_dyn"))
        object.__setattr__(self, "B_dyn", _frozen_array(np.reshape(self.B_dyn, (n,)), 1, "B_dyn"))
        for name in ("Q_state", "Q_final"):
            M = _frozen_array(np.reshape(getattr(self, name), (n, n)), 2, name)
            if not np.allclose(M, M.T, rtol=0, atol=1e-9) or np.linalg.eigvalsh(M).min() < -1e-9:
                raise ModelError(f"{name} must be symmetric positive semidefinite")
            object.__setattr__(self, name, M)
        if not self.r > 0:
            raise ModelError("input weight r must be positive")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ModelError("horizon must be a positive integer")

    @property
    def state_dim(self) -> int:
        return self.s0.size

    def to_dict(self) -> dict:
        return {"A_dyn": self.A_dyn.tolist(), "B_dyn": self.B_dyn.tolist(),
                "Q_state": self.Q_state.tolist(), "Q_final": self.Q_final.tolist(),
                "r": self.r, "horizon": self.horizon, "s0": self.s0.tolist(),
                "bounds": self.bounds.to_dict()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LqrInstance":
        return cls(A_dyn=d["A_dyn"], B_dyn=d["B_dyn"], Q_state=d["Q_state"], Q_final=d["Q_final"],
                   r=float(d["r"]), horizon=int(d["horizon"]), s0=d["s0"],
                   bounds=PowerBounds.from_dict(d["bounds"]))


INSTANCE_TYPES = {
    OpClass.LP: LpInstance,
    OpClass.QP: QpInstance,
    OpClass.MM: MmInstance,
    OpClass.CP: CpInstance,
    OpClass.LMT: LmtInstance,
    OpClass.LQR: LqrInstance,
}


class Provenance(str, Enum):
    FROM_REQUEST = "request"  # Type 1
    FROM_ENVIRONMENT = "environment"  # Type 2
    FROM_KNOWLEDGE_BASE = "knowledge_base"  # Type 3


def instance_parameter_names(instance) -> list[str]:
    """Names of the numeric parameters an instance carries (set ones only)."""
    names = []
    for key, value in instance.to_dict().items():
        if key == "mode" or value is None or (isinstance(value, list) and key == "constraints" and not value):
            continue
        if key == "bounds":
            names.extend(["x_min", "x_max"])
        else:
            names.append(key)
    return names


@dataclass(frozen=True, eq=False)
class CompleteOp:
    op_class: OpClass
    instance: Any
    grid: TimeGrid
    provenance: Mapping[str, Provenance] = field(default_factory=dict)

    def __post_init__(self):
        op_class = OpClass(self.op_class)
        object.__setattr__(self, "op_class", op_class)
        if not isinstance(self.instance, INSTANCE_TYPES[op_class]):
            raise ModelError(f"{op_class.value} op carries a {type(self.instance).__name__}")
        object.__setattr__(self, "provenance",
                           {k: Provenance(v) for k, v in dict(self.provenance).items()})

    def missing_provenance(self) -> list[str]:
        return [n for n in instance_parameter_names(self.instance) if n not in self.provenance]

    @property
    def bounds(self) -> PowerBounds:
        return self.instance.bounds

    def to_dict(self) -> dict:
        return {"op_class": self.op_class.value, "grid": self.grid.to_dict(),
                "instance": self.instance.to_dict(),
                "provenance": {k: v.value for k, v in sorted(self.provenance.items())}}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CompleteOp":
        op_class = OpClass(d["op_class"])
        return cls(op_class=op_class,
                   instance=INSTANCE_TYPES[op_class].from_dict(d["instance"]),
                   grid=TimeGrid.from_dict(d["grid"]),
                   provenance=d.get("provenance", {}))


# ---------------------------------------------------------------- feasibility


@dataclass(frozen=True)
class Violation:
    constraint: str
    index: int
    amount: float


@dataclass(frozen=True)
class FeasibilityReport:
    violations: tuple[Violation, ...]
    tol: float

    @property
    def feasible(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.feasible


def _rows_violations(name, A, b, x, tol, equality=False):
    if A is None:
        return []
    r = A @ x - b
    amounts = np.abs(r) if equality else r
    return [Violation(name, i, float(a)) for i, a in enumerate(amounts) if a > tol]


def validate_schedule(x: PowerSchedule, op: CompleteOp, tol: float = DEFAULT_TOL) -> FeasibilityReport:
    """List every constraint of ``op`` that ``x`` violates by more than ``tol``."""
    if x.grid != op.grid:
        raise DimensionMismatch("schedule grid differs from the op grid")
    inst = op.instance
    v = x.values
    out: list[Violation] = []
    lo, hi = op.bounds.x_min, op.bounds.x_max
    out += [Violation("x_min", i, float(lo - a)) for i, a in enumerate(v) if lo - a > tol]
    out += [Violation("x_max", i, float(a - hi)) for i, a in enumerate(v) if a - hi > tol]

    if isinstance(inst, (LpInstance, QpInstance, MmInstance)):
        n = inst.size
        if n != v.size:
            raise DimensionMismatch(f"instance has {n} variables, schedule {v.size}")
        out += _rows_violations("A x <= b", inst.A, inst.b, v, tol)
        out += _rows_violations("A_eq x = b_eq", inst.A_eq, inst.b_eq, v, tol, equality=True)
    elif isinstance(inst, CpInstance):
        out += [Violation("g_i(x) <= 0", i, float(val)) for i, g in enumerate(inst.constraints)
                if (val := g.evaluate(v)) > tol]
        out += _rows_violations("A_eq x = b_eq", inst.A_eq, inst.b_eq, v, tol, equality=True)
    elif isinstance(inst, LmtInstance):
        s = inst.rollout(v)
        for t, st in enumerate(s):
            if np.any(st < inst.s_min - tol) or np.any(st > inst.s_max + tol):
                gap = max(float(np.max(inst.s_min - st)), float(np.max(st - inst.s_max)))
                out.append(Violation("state box", t, gap))
        horizon = min(inst.max_horizon, v.size)
        if not any(inst.reached(s[t], tol) for t in range(horizon + 1)):
            out.append(Violation("target state", horizon,
                                 float(np.max(np.abs(s[horizon] - inst.s_final)))))
    return FeasibilityReport(tuple(out), tol)
