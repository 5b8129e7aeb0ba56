import json

import numpy as np
import pytest

import oracles
from chargeplan import pipeline
from chargeplan.intent import ClassifierConfig
from chargeplan.llm import BackendConfig, ChatMessage, Role, ToolCall
from chargeplan.model import OpClass, energy_requirement
from chargeplan.parser import RequestParameters, TimeParameters, assemble_op
from chargeplan.pipeline import StageError, constant_baseline, propose_initial_point, run
from conftest import small_env

ALL = tuple(OpClass)
WORKED = "You have 24h to charge my EV at 80% while minimizing the cost of charging"


def test_worked_example_matches_greedy(normalized_env, kb, defaults):
    out = run(WORKED, normalized_env, ClassifierConfig(ALL), kb, defaults)
    assert out.classification.op_class is OpClass.LP
    assert out.solve_result.optimal
    ref, x_ref = oracles.greedy_fill(normalized_env.prices, 1.0, 0.8, normalized_env.p_max)
    assert out.solve_result.objective_value == pytest.approx(ref, abs=1e-6)
    np.testing.assert_allclose(out.solve_result.schedule.values, x_ref, atol=1e-9)
    np.testing.assert_allclose(out.baseline.values, 0.8 / 24)


def test_fast_request_is_bang_bang(kb, defaults):
    env = small_env(np.ones(8), x_max=2.0, capacity=10.0)
    out = run("charge to 50% as fast as possible", env, ClassifierConfig(ALL), kb, defaults)
    assert out.classification.op_class is OpClass.LMT
    tau = out.solve_result.aux["tau"]
    assert tau == oracles.min_time_scan(1, 1, 0, 5, 0, 10, 0, 2, 8) == 3
    x = out.solve_result.schedule.values
    assert np.all(x[:tau - 1] == 2.0)
    assert x[:tau].sum() == pytest.approx(5.0)


def test_nothing_to_charge(kb, defaults):
    env = small_env(np.ones(8), soc_init=0.5)
    for text in ("charge to 50% while keeping the cost low", "charge to 50% smoothly"):
        out = run(text, env, ClassifierConfig(ALL), kb, defaults)
        assert out.solve_result.optimal
        assert np.allclose(out.solve_result.schedule.values, 0, atol=1e-9)
        assert not np.any(out.baseline.values)


def test_record_is_deterministic_and_auditable(physical_env, kb, defaults):
    cfg = ClassifierConfig(ALL)
    text = "Keep the charging power smooth and reach 90% within 10 hours"
    a = run(text, physical_env, cfg, kb, defaults).record(with_timings=False)
    b = run(text, physical_env, cfg, kb, defaults).record(with_timings=False)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert a["op_class"] == "QP"
    assert a["raw_response"]["tool_calls"][0]["arguments"] == {"op_class": "QP"}
    assert set(a["op"]["provenance"]) >= {"Q", "b_eq", "A_eq", "x_max"}
    full = run(text, physical_env, cfg, kb, defaults).record()
    assert set(full["timings_ms"]) == set(pipeline.STAGES)


@pytest.mark.parametrize("text", [
    "Keep the charging power smooth and reach 90% within 10 hours",
    "Go easy on the transformer, I need 70% by tomorrow at 7 a.m.",
])
def test_assist_does_not_change_the_answer(text, physical_env, kb, defaults):
    cfg = ClassifierConfig(ALL)
    plain = run(text, physical_env, cfg, kb, defaults)
    helped = run(text, physical_env, cfg, kb, defaults, assist=True)
    assert helped.initial_point is not None
    a, b = plain.solve_result.objective_value, helped.solve_result.objective_value
    assert abs(a - b) <= 1e-3 * max(1.0, abs(a))


def _op(env, op_class, soc=0.8, hours=6, defaults=None):
    req = RequestParameters(TimeParameters(env.reference_clock, duration_hours=hours), soc)
    return assemble_op(op_class, req, env, defaults)


def test_initial_point_uniform_is_accepted(physical_env, defaults):
    op = _op(physical_env, OpClass.QP, defaults=defaults)
    x = propose_initial_point(op, BackendConfig())
    level = energy_requirement(0.8, physical_env) / (12 * 0.5)
    assert 0 < level < physical_env.p_max
    np.testing.assert_allclose(x.values, level, rtol=1e-12)
    assert propose_initial_point(_op(physical_env, OpClass.LP, defaults=defaults),
                                 BackendConfig()) is None


def _reply(values):
    def fake(cfg, messages, tools):
        return ChatMessage(Role.ASSISTANT, "", (ToolCall("c", "suggest_start", values),))
    return fake


def test_initial_point_sanitization(physical_env, defaults, monkeypatch):
    op = _op(physical_env, OpClass.CP, soc=0.5, defaults=defaults)
    T = op.grid.num_slots
    e_req = energy_requirement(0.5, physical_env)
    monkeypatch.setattr(pipeline, "chat", _reply({"values": [50.0] + [-3.0] * (T - 1)}))
    x = propose_initial_point(op, BackendConfig())
    assert x is not None
    assert np.all(x.values >= -1e-9) and np.all(x.values <= physical_env.p_max + 1e-9)
    assert x.energy == pytest.approx(e_req, rel=1e-9)

    for bad in ({"values": [1.0] * (T + 1)}, {"values": ["a"] * T}, {"wrong": 1},
                {"values": [float("nan")] * T}):
        monkeypatch.setattr(pipeline, "chat", _reply(bad))
        assert propose_initial_point(op, BackendConfig()) is None

    def text_only(cfg, messages, tools):
        return ChatMessage(Role.ASSISTANT, "no idea")
    monkeypatch.setattr(pipeline, "chat", text_only)
    assert propose_initial_point(op, BackendConfig()) is None


def test_constant_baseline_is_clipped(physical_env, defaults):
    op = _op(physical_env, OpClass.LP, defaults=defaults)
    base = constant_baseline(op, 1e6)
    assert np.all(base.values == physical_env.p_max)


def test_stage_errors(normalized_env, kb, defaults):
    cfg = ClassifierConfig(ALL)
    with pytest.raises(StageError) as info:
        run("   ", normalized_env, cfg, kb, defaults)
    assert info.value.stage == "classify"
    with pytest.raises(StageError) as info:
        run("charge cheaply within 48 hours", normalized_env, cfg, kb, defaults)
    assert info.value.stage == "parse"
    with pytest.raises(StageError) as info:
        run("charge cheaply to 10%", small_env(np.ones(8), soc_init=0.5), cfg, kb, defaults)
    assert info.value.stage == "parse"
