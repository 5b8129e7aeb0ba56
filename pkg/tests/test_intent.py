import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chargeplan import intent
from chargeplan.evaluation import load_templates
from chargeplan.intent import (SCENARIO_ORDER, ClassifierConfig, KnowledgeBase, MissingKnowledge,
                               OutOfSet, PromptScenario, build_system_prompt, classify)
from chargeplan.llm import BackendConfig, ChatMessage, Role, SchemaViolation, ToolCall
from chargeplan.model import OpClass, op_for_metric

ALL = tuple(OpClass)
B, C, E = SCENARIO_ORDER
NONEMPTY = [s for k in range(1, 7) for s in itertools.combinations(ALL, k)]


def prompt(ops, scenario, kb):
    return build_system_prompt(ClassifierConfig(ops, scenario), kb)


def test_packaged_kb_is_complete(kb):
    for op in ALL:
        e = kb.entry(op)
        assert e.math and e.ev_context and e.remarks


def test_basic_prompt_has_math_only(kb):
    p = prompt((OpClass.LP,), B, kb)
    assert kb.entry(OpClass.LP).math in p
    assert kb.entry(OpClass.LP).ev_context not in p
    assert kb.entry(OpClass.LP).remarks not in p


def test_error_informed_has_everything(kb):
    ops = (OpClass.LP, OpClass.LMT, OpClass.MM)
    p = prompt(ops, E, kb)
    for op in ops:
        e = kb.entry(op)
        assert e.math in p and e.ev_context in p and e.remarks in p
    assert kb.entry(OpClass.QP).math not in p


def test_missing_context_is_legal(kb):
    thin = kb.without_context([OpClass.QP])
    p = prompt((OpClass.LP, OpClass.QP), C, thin)
    assert kb.entry(OpClass.QP).math in p
    assert kb.entry(OpClass.QP).ev_context not in p
    assert kb.entry(OpClass.LP).ev_context in p


def test_missing_math_raises(kb, tmp_path):
    for op in ALL:
        (tmp_path / op.value).mkdir()
        if op is not OpClass.CP:
            (tmp_path / op.value / "math.md").write_text(f"math of {op.value}")
    partial = KnowledgeBase.load(tmp_path)
    assert prompt((OpClass.LP,), E, partial).count("math of LP") == 1
    with pytest.raises(MissingKnowledge):
        prompt((OpClass.LP, OpClass.CP), B, partial)


@pytest.mark.parametrize("ops", NONEMPTY, ids=lambda s: "-".join(o.value for o in s))
def test_prompt_layers_nest(ops, kb):
    basic, ctx, rem = (prompt(ops, s, kb) for s in SCENARIO_ORDER)
    assert basic in ctx and ctx in rem
    assert len(basic) < len(ctx) < len(rem)
    tail = f"op_class set to one of: {', '.join(o.value for o in ops)}. Do not answer in plain text."
    assert basic.endswith(tail) and ctx.endswith(tail) and rem.endswith(tail)
    assert "classify_op" in basic


@settings(max_examples=40, deadline=None)
@given(st.permutations(ALL), st.sampled_from(SCENARIO_ORDER))
def test_prompt_grows_with_candidate_set(order, scenario):
    kb = KnowledgeBase.load()
    sizes = [len(prompt(order[:k], scenario, kb)) for k in range(1, 7)]
    assert sizes == sorted(sizes) and len(set(sizes)) == 6


def test_classify_examples(kb):
    three = (OpClass.LP, OpClass.LMT, OpClass.MM)
    res = classify("Charge my EV while minimizing the electricity cost",
                   ClassifierConfig(three), kb)
    assert res.op_class is OpClass.LP
    assert res.raw_response.tool_calls[0].arguments == {"op_class": "LP"}

    implicit = "I want my EV to juice up but only when it's financially wise"
    cfg = ClassifierConfig(ALL, E, BackendConfig(mock_keywords=(("LP", "financially"),)))
    assert classify(implicit, cfg, kb).op_class is OpClass.LP

    for text in ("go fast", "keep the peak low", "anything at all"):
        assert classify(text, ClassifierConfig((OpClass.LP,)), kb).op_class is OpClass.LP


def test_classify_rejects_empty_text(kb):
    with pytest.raises(ValueError):
        classify("   ", ClassifierConfig(ALL), kb)
    with pytest.raises(ValueError):
        ClassifierConfig(())


def _fake_chat(value):
    def fake(cfg, messages, tools):
        return ChatMessage(Role.ASSISTANT, "", (ToolCall("c", "classify_op", value),))
    return fake


def test_out_of_set_answers(kb, monkeypatch):
    monkeypatch.setattr(intent, "chat", _fake_chat({"op_class": "QP"}))
    with pytest.raises(OutOfSet) as info:
        classify("anything", ClassifierConfig((OpClass.LP, OpClass.MM)), kb)
    assert info.value.returned == "QP"
    monkeypatch.setattr(intent, "chat", _fake_chat({"op_class": "ZZ"}))
    with pytest.raises(OutOfSet):
        classify("anything", ClassifierConfig((OpClass.LP,)), kb)
    monkeypatch.setattr(intent, "chat", _fake_chat({"op_class": 3}))
    with pytest.raises(SchemaViolation):
        classify("anything", ClassifierConfig((OpClass.LP,)), kb)


@settings(max_examples=60, deadline=None)
@given(st.text(min_size=1, max_size=80).filter(str.strip),
       st.sets(st.sampled_from(ALL), min_size=1), st.sampled_from(SCENARIO_ORDER))
def test_classify_stays_in_set_and_is_deterministic(text, cands, scenario):
    kb = KnowledgeBase.load()
    cfg = ClassifierConfig(tuple(sorted(cands, key=ALL.index)), scenario)
    a, b = classify(text, cfg, kb), classify(text, cfg, kb)
    assert a.op_class in cands
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_explicit_templates_all_recognized(kb):
    templates = load_templates()
    for metric, fam in templates.items():
        target = op_for_metric(metric)
        if target is None:
            continue
        for scenario in PromptScenario:
            cfg = ClassifierConfig(ALL, scenario)
            for tpl in fam["explicit"]:
                text = tpl["text"] if isinstance(tpl, dict) else tpl
                text = text.replace("{SOC}", "80%").replace(
                    "{DEADLINE}", "by tomorrow at 7 a.m.").replace("{DURATION}", "8 hours")
                assert classify(text, cfg, kb).op_class is target, text
