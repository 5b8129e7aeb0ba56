"""Parameter identification: pulls the time window and SoC target out of a
request, then combines them with meter data and stored defaults into a
complete, provenance-tagged problem instance."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from chargeplan.llm import BackendConfig, ChatMessage, Role, ToolSpec, chat, extract_tool_call
from chargeplan.model import (CompleteOp, CpInstance, EnvironmentSnapshot, LmtInstance,
                              LpInstance, LqrInstance, MmInstance, OpClass, PowerSum,
                              Provenance, QpInstance, TargetMode, TimeGrid, energy_requirement)

MAX_WINDOW_HOURS = 7 * 24


class ParseError(ValueError):
    pass


class UnresolvableTime(ParseError):
    pass


class WindowTooLong(ParseError):
    pass


class MissingParameter(ParseError):
    def __init__(self, kind: Provenance, symbol: str):
        self.kind = Provenance(kind)
        self.symbol = symbol
        super().__init__(f"missing {self.kind.value} parameter {symbol!r}")


# ---------------------------------------------------------------- defaults


@dataclass(frozen=True)
class DefaultsBook:
    """Stored common-knowledge values, keyed by name."""

    values: Mapping[str, float]

    def __post_init__(self):
        clean = {}
        for k, v in dict(self.values).items():
            v = float(v)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"default {k!r} must be finite and positive, got {v}")
            clean[k] = v
        object.__setattr__(self, "values", clean)

    def get(self, name: str) -> float:
        try:
            return self.values[name]
        except KeyError:
            raise MissingParameter(Provenance.FROM_KNOWLEDGE_BASE, name) from None

    def hour(self, name: str) -> int:
        return int(self.get(name)) % 24

    @classmethod
    def load(cls, path: str | Path | None = None) -> "DefaultsBook":
        if path is None:
            text = (resources.files("chargeplan") / "data" / "defaults.json").read_text("utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls(json.loads(text))


# ---------------------------------------------------------------- time


@dataclass(frozen=True)
class TimeParameters:
    start: datetime
    end: datetime | None = None
    duration_hours: float | None = None
    source_phrases: tuple[str, ...] = ()

    def __post_init__(self):
        if (self.end is None) == (self.duration_hours is None):
            raise ValueError("give exactly one of end and duration_hours")
        hours = self.window_hours
        if not 0 < hours <= MAX_WINDOW_HOURS + 1e-9:
            raise UnresolvableTime(f"window of {hours:g} h is not in (0, {MAX_WINDOW_HOURS}] h")

    @property
    def window_hours(self) -> float:
        if self.duration_hours is not None:
            return float(self.duration_hours)
        return (self.end - self.start).total_seconds() / 3600.0

    @property
    def window_end(self) -> datetime:
        return self.start + timedelta(hours=self.window_hours)

    def to_dict(self) -> dict:
        return {"start": self.start.isoformat(timespec="minutes"),
                "end": self.end.isoformat(timespec="minutes") if self.end else None,
                "duration_hours": self.duration_hours,
                "source_phrases": list(self.source_phrases)}


@dataclass(frozen=True)
class RequestParameters:
    time: TimeParameters
    soc_target: float | None = None
    extras: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.soc_target is not None and not 0 < self.soc_target <= 1:
            raise ParseError(f"SoC target {self.soc_target} outside (0, 1]")


TIME_TOOL = ToolSpec(
    name="set_time_parameters",
    description=("Record the charging window stated in the request. Copy the user's own "
                 "words for start and end (for example 'tomorrow at 6 a.m.'); give a "
                 "duration in hours when the request states one. Leave out anything "
                 "the request does not mention."),
    parameters={
        "type": "object",
        "properties": {
            "start": {"type": "string"},
            "end": {"type": "string"},
            "duration_hours": {"type": "number", "exclusiveMinimum": 0},
        },
    },
)

SOC_TOOL = ToolSpec(
    name="set_soc_target",
    description=("Record the battery level the user wants at the end, in percent. "
                 "Leave it out when the request does not state one."),
    parameters={
        "type": "object",
        "properties": {"soc_target_percent": {"type": "number", "exclusiveMinimum": 0,
                                              "maximum": 100}},
    },
)

_SYSTEM = ("You extract parameters from electric-vehicle charging requests. "
           "Call the provided tool exactly once.")

_CLOCK_RE = re.compile(r"\b(\d{1,2})(?::(\d{2}))?\s*(a\.?m\.?|p\.?m\.?)?(?![\w%])", re.IGNORECASE)


def resolve_time_phrase(phrase: str, reference: datetime, defaults: DefaultsBook) -> datetime:
    """Turn a phrase like 'tomorrow at 6 a.m.' into a timestamp.

    Conventions: 'tomorrow' is the next calendar day; morning, afternoon and
    evening map to the stored hours, 'tonight' to the evening hour; clock
    times are taken as stated. Without a day word the next occurrence after
    ``reference`` is used. ISO timestamps pass through unchanged.
    """
    text = phrase.strip().lower()
    try:
        return datetime.fromisoformat(phrase.strip())
    except ValueError:
        pass
    day_offset = None
    if "tomorrow" in text:
        day_offset = 1
    elif "today" in text or "tonight" in text or "this " in text:
        day_offset = 0
    hour = minute = None
    if re.search(r"\bnoon\b", text):
        hour, minute = 12, 0
    elif re.search(r"\bmidnight\b", text):
        hour, minute = 0, 0
        day_offset = None if day_offset is None else day_offset + 1
    else:
        m = _CLOCK_RE.search(text)
        if m:
            hour, minute = int(m.group(1)), int(m.group(2) or 0)
            suffix = (m.group(3) or "").replace(".", "")
            if suffix == "pm" and hour < 12:
                hour += 12
            elif suffix == "am" and hour == 12:
                hour = 0
            if hour > 23 or minute > 59:
                raise UnresolvableTime(f"bad clock time in {phrase!r}")
    if hour is None:
        for word, key in (("morning", "morning_hour"), ("afternoon", "afternoon_hour"),
                          ("evening", "evening_hour"), ("tonight", "evening_hour"),
                          ("night", "evening_hour")):
            if word in text:
                hour, minute = defaults.hour(key), 0
                break
    if hour is None:
        if day_offset == 1:
            hour, minute = defaults.hour("morning_hour"), 0
        else:
            raise UnresolvableTime(f"cannot resolve {phrase!r}")
    base = reference.replace(hour=hour, minute=minute, second=0, microsecond=0)
    if day_offset is not None:
        return base + timedelta(days=day_offset)
    return base if base > reference else base + timedelta(days=1)


def resolve_time_arguments(args: Mapping, reference: datetime,
                           defaults: DefaultsBook) -> TimeParameters:
    phrases = tuple(str(args[k]) for k in ("start", "end") if args.get(k))
    start = (resolve_time_phrase(str(args["start"]), reference, defaults)
             if args.get("start") else reference)
    end = resolve_time_phrase(str(args["end"]), start, defaults) if args.get("end") else None
    duration = args.get("duration_hours")
    if end is not None and end <= start:
        raise UnresolvableTime(f"end {end} is not after start {start}")
    if end is not None and duration is not None:
        stated = (end - start).total_seconds() / 3600.0
        if abs(stated - float(duration)) > 1 / 60:
            raise UnresolvableTime(f"end gives {stated:g} h but duration says {duration:g} h")
        duration = None
    if end is None and duration is None:
        duration = defaults.get("default_duration_hours")
    return TimeParameters(start, end, None if duration is None else float(duration), phrases)


def _tool_round(text: str, tool: ToolSpec, backend: BackendConfig) -> dict:
    messages = [ChatMessage(Role.SYSTEM, _SYSTEM), ChatMessage(Role.USER, text)]
    return dict(extract_tool_call(chat(backend, messages, [tool]), tool).arguments)


def extract_time_parameters(request_text: str, reference_clock: datetime,
                            backend: BackendConfig,
                            defaults: DefaultsBook | None = None) -> TimeParameters:
    defaults = defaults or DefaultsBook.load()
    args = _tool_round(request_text, TIME_TOOL, backend)
    return resolve_time_arguments(args, reference_clock, defaults)


def extract_request_parameters(request_text: str, reference_clock: datetime,
                               backend: BackendConfig,
                               defaults: DefaultsBook | None = None) -> RequestParameters:
    defaults = defaults or DefaultsBook.load()
    time = extract_time_parameters(request_text, reference_clock, backend, defaults)
    soc = _tool_round(request_text, SOC_TOOL, backend).get("soc_target_percent")
    return RequestParameters(time, None if soc is None else float(soc) / 100.0)


# ---------------------------------------------------------------- grid


def window_slots(time: TimeParameters, env: EnvironmentSnapshot) -> tuple[int, int]:
    """(first slot index, slot count) of the request window on the env grid."""
    k0 = env.slot_index(time.start)
    T = math.ceil(time.window_hours / env.grid.delta_t - 1e-9)
    if k0 < 0:
        raise WindowTooLong(f"window starts before the meter data ({env.grid.start})")
    if k0 + T > env.grid.num_slots:
        raise WindowTooLong(f"window needs slots {k0}..{k0 + T - 1} but data ends at "
                            f"slot {env.grid.num_slots - 1}")
    return k0, T


def build_grid(time: TimeParameters, env: EnvironmentSnapshot) -> TimeGrid:
    k0, T = window_slots(time, env)
    return TimeGrid(env.grid.slot_start(k0), env.grid.delta_t, T)


# ---------------------------------------------------------------- instances


def instantiate(op_class: OpClass, env: EnvironmentSnapshot, start_slot: int, num_slots: int,
                soc_target: float, defaults: DefaultsBook,
                soc_source: Provenance = Provenance.FROM_REQUEST) -> CompleteOp:
    """EV-charging instance of ``op_class`` over slots
    [start_slot, start_slot + num_slots) of ``env``."""
    op_class = OpClass(op_class)
    T, dt = num_slots, env.grid.delta_t
    if start_slot < 0 or T < 1 or start_slot + T > env.grid.num_slots:
        raise WindowTooLong(f"slots {start_slot}..{start_slot + T - 1} outside the meter data")
    sl = slice(start_slot, start_slot + T)
    prices, load = env.prices[sl], env.non_flexible_load[sl]
    e_req = energy_requirement(soc_target, env)
    grid = TimeGrid(env.grid.slot_start(start_slot), dt, T)
    bounds = env.bounds
    ENV, REQ, KB = Provenance.FROM_ENVIRONMENT, Provenance.FROM_REQUEST, Provenance.FROM_KNOWLEDGE_BASE
    prov = {"x_min": ENV, "x_max": ENV}
    energy_row = np.full((1, T), -dt)
    if op_class is OpClass.LP:
        inst = LpInstance(c=prices * dt, bounds=bounds, A=energy_row, b=[-e_req])
        prov.update(c=ENV, A=ENV, b=soc_source)
    elif op_class is OpClass.MM:
        inst = MmInstance(F=np.eye(T), g=load, bounds=bounds, A=energy_row, b=[-e_req])
        prov.update(F=KB, g=ENV, A=ENV, b=soc_source)
    elif op_class is OpClass.QP:
        D = np.diff(np.eye(T), axis=0)
        inst = QpInstance(Q=2.0 * D.T @ D, c=np.zeros(T), bounds=bounds,
                          A_eq=np.full((1, T), dt), b_eq=[e_req])
        prov.update(Q=KB, c=KB, A_eq=ENV, b_eq=soc_source)
    elif op_class is OpClass.CP:
        inst = CpInstance(objective=PowerSum(load, defaults.get("grid_damage_exponent")),
                          size=T, bounds=bounds, A_eq=np.full((1, T), dt), b_eq=[e_req])
        prov.update(objective=KB, size=REQ, A_eq=ENV, b_eq=soc_source)
    elif op_class is OpClass.LMT:
        cap = env.battery_capacity_kwh
        inst = LmtInstance(A_dyn=[[1.0]], B_dyn=[env.efficiency * dt],
                           s_init=[env.soc_init * cap], s_final=[soc_target * cap],
                           s_min=[env.soc_min * cap], s_max=[env.soc_max * cap],
                           bounds=bounds, max_horizon=T, mode=TargetMode.AT_LEAST)
        prov.update(A_dyn=ENV, B_dyn=ENV, s_init=ENV, s_final=soc_source, s_min=ENV,
                    s_max=ENV, max_horizon=REQ)
    elif op_class is OpClass.LQR:
        cap = env.battery_capacity_kwh
        inst = LqrInstance(A_dyn=[[1.0]], B_dyn=[env.efficiency * dt], Q_state=[[1.0]],
                           Q_final=[[1.0]], r=defaults.get("lqr_input_weight"), horizon=T,
                           s0=[(env.soc_init - soc_target) * cap], bounds=bounds)
        prov.update(A_dyn=ENV, B_dyn=ENV, Q_state=KB, Q_final=KB, r=KB, horizon=REQ,
                    s0=soc_source)
    else:  # pragma: no cover
        raise ValueError(op_class)
    return CompleteOp(op_class, inst, grid, prov)


def assemble_op(op_class: OpClass, req: RequestParameters, env: EnvironmentSnapshot,
                defaults: DefaultsBook) -> CompleteOp:
    if req.soc_target is not None:
        soc, source = req.soc_target, Provenance.FROM_REQUEST
    else:
        soc, source = defaults.get("default_soc_target"), Provenance.FROM_KNOWLEDGE_BASE
    k0, T = window_slots(req.time, env)
    op = instantiate(op_class, env, k0, T, soc, defaults, soc_source=source)
    missing = op.missing_provenance()
    if missing:  # pragma: no cover - guards future instance fields
        raise MissingParameter(Provenance.FROM_KNOWLEDGE_BASE, missing[0])
    return op
