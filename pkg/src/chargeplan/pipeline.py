"""Request-to-schedule chain: classify, assemble the instance, solve."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from chargeplan.intent import ClassificationResult, ClassifierConfig, KnowledgeBase, classify
from chargeplan.llm import (BackendConfig, ChatMessage, GatewayError, Role, ToolSpec, chat,
                            extract_tool_call)
from chargeplan.model import (CompleteOp, EnvironmentSnapshot, OpClass, PowerSchedule,
                              energy_requirement)
from chargeplan.parser import (DefaultsBook, RequestParameters, assemble_op,
                               extract_request_parameters)
from chargeplan.solvers import SolveResult, dispatch
from chargeplan.solvers.projection import Projector

log = logging.getLogger(__name__)

STAGES = ("classify", "parse", "solve")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


START_TOOL = ToolSpec(
    name="suggest_start",
    description="Suggest a starting charging-power vector for the numerical solver.",
    parameters={
        "type": "object",
        "properties": {"values": {"type": "array", "items": {"type": "number"}}},
        "required": ["values"],
    },
)


def target_energy(op: CompleteOp) -> float:
    """Grid-side energy the instance asks for, read back from its rows."""
    inst = op.instance
    if op.op_class in (OpClass.LP, OpClass.MM):
        return float(-inst.b[0])
    if op.op_class in (OpClass.QP, OpClass.CP):
        return float(inst.b_eq[0])
    eff_dt = float(inst.B_dyn[0])
    if op.op_class is OpClass.LMT:
        return float(max(inst.s_final[0] - inst.s_init[0], 0.0)) / eff_dt * op.grid.delta_t
    return float(max(-inst.s0[0], 0.0)) / eff_dt * op.grid.delta_t


def constant_baseline(op: CompleteOp, energy: float) -> PowerSchedule:
    """Flat power E / (T * dt), clipped to the charger limits."""
    T, dt = op.grid.num_slots, op.grid.delta_t
    level = np.clip(energy / (T * dt), op.bounds.x_min, op.bounds.x_max)
    return PowerSchedule(op.grid, np.full(T, level))


def propose_initial_point(op: CompleteOp, backend: BackendConfig) -> PowerSchedule | None:
    """Ask the model for a starting vector; sanitize it or give up quietly.

    The answer is clipped to the bounds and projected onto the linear rows,
    so it can only change the solver path, never the feasible set.
    """
    if op.op_class not in (OpClass.QP, OpClass.CP):
        return None
    T = op.grid.num_slots
    info = {"op_class": op.op_class.value, "num_slots": T, "delta_t": op.grid.delta_t,
            "energy_kwh": target_energy(op), "x_min": op.bounds.x_min,
            "x_max": op.bounds.x_max}
    messages = [
        ChatMessage(Role.SYSTEM, "You help a numerical solver start close to a good charging "
                                 "plan. Reply by calling suggest_start with one power value "
                                 "per slot."),
        ChatMessage(Role.USER, "Problem summary: " + json.dumps(info, sort_keys=True)),
    ]
    try:
        call = extract_tool_call(chat(backend, messages, [START_TOOL]), START_TOOL)
        values = np.asarray(call.arguments["values"], dtype=float)
    except (GatewayError, ValueError, TypeError, KeyError) as exc:
        log.info("no usable starting point: %s", exc)
        return None
    if values.shape != (T,) or not np.all(np.isfinite(values)):
        return None
    inst = op.instance
    lo, hi = op.bounds.x_min, op.bounds.x_max
    proj = Projector.build(lo, hi, getattr(inst, "A", None), getattr(inst, "b", None),
                           inst.A_eq, inst.b_eq, n=T)
    x = proj(np.clip(values, lo, hi))
    if x is None:
        return None
    return PowerSchedule(op.grid, x)


@dataclass
class RunOutput:
    request: str
    classification: ClassificationResult
    parameters: RequestParameters
    complete_op: CompleteOp
    solve_result: SolveResult
    baseline: PowerSchedule
    initial_point: PowerSchedule | None = None
    timings_ms: dict[str, float] = field(default_factory=dict)

    def record(self, with_timings: bool = True) -> dict:
        out = {
            "request": self.request,
            "scenario": self.classification.scenario.value,
            "candidate_set": [c.value for c in self.classification.candidate_set],
            "op_class": self.classification.op_class.value,
            "raw_response": self.classification.raw_response.to_dict(),
            "parameters": {"time": self.parameters.time.to_dict(),
                           "soc_target": self.parameters.soc_target},
            "op": self.complete_op.to_dict(),
            "status": self.solve_result.status.value,
            "objective": self.solve_result.to_dict()["objective"],
            "iterations": self.solve_result.iterations,
            "schedule": self.solve_result.schedule.values.tolist(),
            "baseline": self.baseline.values.tolist(),
        }
        if "tau" in self.solve_result.aux:
            out["tau"] = int(self.solve_result.aux["tau"])
        if with_timings:
            out["timings_ms"] = dict(self.timings_ms)
        return out


def run(request_text: str, env: EnvironmentSnapshot, cfg: ClassifierConfig, kb: KnowledgeBase,
        defaults: DefaultsBook, assist: bool = False) -> RunOutput:
    """Classify, parse and solve one request. Stage failures are raised as
    StageError carrying the stage name."""
    timings = {}

    def timed(stage, fn):
        t0 = time.perf_counter()
        try:
            return fn()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc
        finally:
            timings[stage] = round(1000 * (time.perf_counter() - t0), 3)

    cls = timed("classify", lambda: classify(request_text, cfg, kb))

    def parse():
        req = extract_request_parameters(request_text, env.reference_clock, cfg.backend, defaults)
        return req, assemble_op(cls.op_class, req, env, defaults)

    req, op = timed("parse", parse)
    soc = req.soc_target if req.soc_target is not None else defaults.get("default_soc_target")

    def solve():
        start = propose_initial_point(op, cfg.backend) if assist else None
        return start, dispatch(op, init=start)

    start, result = timed("solve", solve)
    baseline = constant_baseline(op, energy_requirement(soc, env))
    return RunOutput(request_text, cls, req, op, result, baseline, start, timings)
