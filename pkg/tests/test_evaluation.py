import csv
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chargeplan.evaluation import (REPORT_COLUMNS, AbstractRequest, ConfusionMatrix,
                                   CorpusEntry, EmptyCorpus, Explicitness, InsufficientTemplates,
                                   MetricContext, Prediction, arol_for_requests,
                                   comparison_schedules, compute_arol, compute_ira,
                                   emit_report, generate_corpus, ira_rows, load_templates,
                                   metric_value, min_duration_slots, mixture_study,
                                   mixture_weights, read_corpus, sample_abstract_requests,
                                   score_predictions, write_corpus)
from chargeplan.intent import ClassifierConfig, PromptScenario
from chargeplan.model import MAPPED_METRICS, OpClass, PerformanceMetric, op_for_metric
from conftest import small_env

ALL = tuple(OpClass)
CC, CT, PP, PV, GD, EI = (PerformanceMetric(m) for m in ("CC", "CT", "PP", "PV", "GD", "EI"))


# ---------------------------------------------------------------- corpus


def test_corpus_counts_and_split():
    corpus = generate_corpus(160, seed=0)
    assert len(corpus) == 800
    for m in MAPPED_METRICS:
        rows = [e for e in corpus if e.metric is m]
        assert len(rows) == 160
        assert sum(e.explicitness is Explicitness.EXPLICIT for e in rows) == 80
        assert all(e.truth_op_class is op_for_metric(m) for e in rows)
    small = generate_corpus(2, seed=3)
    assert len(small) == 10
    assert [e.explicitness.value for e in small[:2]] == ["explicit", "implicit"]
    with_ei = generate_corpus(3, seed=3, include_ei=True)
    assert len(with_ei) == 18
    assert all(e.truth_op_class is None for e in with_ei if e.metric is EI)


def test_corpus_is_deterministic(tmp_path):
    a, b = generate_corpus(20, seed=5), generate_corpus(20, seed=5)
    assert write_corpus(a) == write_corpus(b)
    assert write_corpus(a) != write_corpus(generate_corpus(20, seed=6))
    write_corpus(a, tmp_path / "c.jsonl")
    assert [e.to_dict() for e in read_corpus(tmp_path / "c.jsonl")] == [e.to_dict() for e in a]


def test_quoted_requests_are_in_templates():
    cc = load_templates()["CC"]
    texts = [t["text"] if isinstance(t, dict) else t for t in cc["explicit"] + cc["implicit"]]
    for quote in ("Charge my EV while minimizing the electricity cost",
                  "You have 24h to charge my EV at 80% while minimizing the cost of charging",
                  "Charge my EV but try to reduce the costs please.",
                  "I want my EV to juice up but only when it's financially wise"):
        assert quote in texts


def test_template_shortage_and_bad_labels():
    thin = {m.value: {"explicit": ["a"], "implicit": ["b"]} for m in PerformanceMetric}
    with pytest.raises(InsufficientTemplates):
        generate_corpus(2, seed=0, templates=thin)
    with pytest.raises(ValueError):
        CorpusEntry("x", "t", CC, Explicitness.EXPLICIT, OpClass.MM)


# ---------------------------------------------------------------- IRA


def _entry(i, metric, kind="explicit"):
    return CorpusEntry(f"e{i}", "text", metric, kind, op_for_metric(metric))


def test_ira_arithmetic():
    preds = [Prediction(_entry(i, CC), OpClass.LP) for i in range(4)]
    preds.append(Prediction(_entry(4, CC), OpClass.MM))
    res = score_predictions(preds, ClassifierConfig(ALL))
    assert res.ira == pytest.approx(0.8) and res.per_metric[CC] == Fraction(4, 5)
    assert res.confusion.probability(CC, OpClass.MM) == 0.2


def test_errors_count_as_misses_but_not_probability_mass():
    preds = [Prediction(_entry(0, PP), OpClass.MM), Prediction(_entry(1, PP), None, "boom")]
    res = score_predictions(preds, ClassifierConfig(ALL))
    assert res.ira == 0.5
    assert res.confusion.row_total(PP) == 2
    assert res.confusion.probability(PP, OpClass.MM) == 1.0


def test_empty_inputs(kb):
    with pytest.raises(EmptyCorpus):
        compute_ira([], ClassifierConfig(ALL), kb)
    ei_only = [CorpusEntry("q", "t", EI, "explicit", None)]
    with pytest.raises(EmptyCorpus):
        score_predictions([Prediction(ei_only[0], OpClass.LP)], ClassifierConfig(ALL))


def test_explicit_corpus_scores_full_marks(kb):
    corpus = generate_corpus(40, seed=1, include_ei=True)
    for scenario in PromptScenario:
        res = compute_ira(corpus, ClassifierConfig(ALL, scenario), kb)
        assert res.per_explicitness[Explicitness.EXPLICIT] == 1
        assert 0 <= res.ira <= 1
        assert res.out_of_knowledge["total"] == 40
        for m in MAPPED_METRICS:
            assert res.confusion.row_total(m) == 40
            probs = [res.confusion.probability(m, c) for c in OpClass]
            assert sum(probs) == pytest.approx(1.0)
        rows = ira_rows(res)
        assert rows[-1]["metric"] == "ALL" and rows[-1]["ira"] == res.ira


def test_ira_is_deterministic(kb):
    corpus = generate_corpus(10, seed=2)
    a = compute_ira(corpus, ClassifierConfig(ALL), kb).summary()
    b = compute_ira(corpus, ClassifierConfig(ALL), kb).summary()
    assert json.dumps(a) == json.dumps(b)


def test_confusion_round_trip():
    cm = ConfusionMatrix()
    cm.add(CC, OpClass.LP, 3)
    cm.add(CC, None, 2)
    cm.add(PV, OpClass.MM)
    again = ConfusionMatrix.from_dict(json.loads(json.dumps(cm.to_dict())))
    assert again.to_dict() == cm.to_dict()
    assert cm.scaled(2).to_dict()["CC"]["error"] == 4


# ---------------------------------------------------------------- AROL


def test_abstract_requests(normalized_env, defaults):
    one = sample_abstract_requests(1, 9, normalized_env, defaults)
    assert one == sample_abstract_requests(1, 9, normalized_env, defaults)
    many = sample_abstract_requests(1000, 4, normalized_env, defaults)
    floor = min_duration_slots(normalized_env, 0.8)
    assert floor == 4
    for r in many:
        assert r.start_slot >= 0 and r.duration_slots >= floor
        assert r.start_slot + r.duration_slots <= normalized_env.grid.num_slots


def test_metric_values():
    ctx = MetricContext(np.array([1.0, 2.0, 3.0]), np.array([0.5, 0.0, 1.0]), 0.5, 1.0, 3.0)
    x = np.array([2.0, 0.0, 1.0])
    assert metric_value(CC, x, ctx) == 2.5
    assert metric_value(CT, x, ctx) == 1.0
    assert metric_value(CT, np.zeros(3), ctx) == 4.0
    assert metric_value(PP, x, ctx) == 2.5
    assert metric_value(PV, x, ctx) == 5.0
    assert metric_value(GD, x, ctx) == 2.5 ** 3 + 8.0
    with pytest.raises(ValueError):
        metric_value(EI, x, ctx)


def test_identity_confusion_gives_zero(normalized_env, defaults):
    res = compute_arol(ConfusionMatrix.identity(), 20, 0, normalized_env, defaults)
    assert res.arol == {m: 0.0 for m in MAPPED_METRICS}


def test_hand_case_cost_vs_peak(defaults):
    env = small_env([1.0, 2.0], x_max=1.0)
    cm = ConfusionMatrix()
    cm.add(CC, OpClass.MM)
    res = arol_for_requests(cm, [AbstractRequest(0, 2, 1.0)], env, defaults)
    assert abs(res.arol[CC] - 0.5) <= 1e-9
    assert res.used_samples[CC] == 1


def test_metricless_class_is_reported_not_scored(defaults):
    env = small_env([1.0, 2.0], x_max=1.0)
    cm = ConfusionMatrix()
    cm.add(CC, OpClass.LP, 2)
    cm.add(CC, OpClass.LQR, 1)
    cm.add(CC, OpClass.MM, 1)
    res = arol_for_requests(cm, [AbstractRequest(0, 2, 1.0)], env, defaults)
    assert res.unscored_mass[CC] == 0.25
    assert abs(res.arol[CC] - 0.25 * 0.5) <= 1e-12
    assert res.rows()[0]["unscored_mass"] == 0.25


def _random_confusion(rng):
    cm = ConfusionMatrix()
    for m in MAPPED_METRICS:
        for c in OpClass:
            cm.add(m, c, int(rng.integers(0, 4)))
        cm.add(m, op_for_metric(m), 1)
    return cm


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_arol_losses_nonnegative_and_scale_free(seed):
    from chargeplan.model import load_environment
    from chargeplan.parser import DefaultsBook
    from conftest import DATA
    env = load_environment(DATA / "fixtures" / "normalized.json")
    defaults = DefaultsBook.load()
    cm = _random_confusion(np.random.default_rng(seed))
    a = compute_arol(cm, 6, seed, env, defaults)
    b = compute_arol(cm.scaled(2), 6, seed, env, defaults)
    assert a.arol == b.arol
    assert a.min_loss >= -1e-9
    assert all(v >= -1e-9 for v in a.arol.values())
    for m in MAPPED_METRICS:
        assert a.used_samples[m] + a.degenerate[m] + a.failed[m] == 6


def test_arol_deterministic_and_parallel_equal(physical_env, defaults):
    cm = _random_confusion(np.random.default_rng(1))
    a = compute_arol(cm, 4, 3, physical_env, defaults)
    b = compute_arol(cm, 4, 3, physical_env, defaults, workers=3)
    assert a.rows() == b.rows() and a.losses == b.losses


# ---------------------------------------------------------------- mixture


def test_mixture_weights():
    assert mixture_weights(Fraction(1, 3)) == {CC: Fraction(1, 3), CT: Fraction(1, 3),
                                               PP: Fraction(1, 3)}
    with pytest.raises(ValueError):
        mixture_weights(Fraction(3, 2))


def test_mixture_identity(kb):
    corpus = generate_corpus(20, seed=4)
    sets = [ALL, (OpClass.LP, OpClass.LMT, OpClass.MM), (OpClass.MM, OpClass.QP)]
    rows = mixture_study([0, Fraction(1, 3), Fraction(1, 2), 1], corpus, sets,
                         ClassifierConfig(ALL), kb, n_draws=400)
    assert len(rows) == 12
    ira = {}
    for cset in sets:
        res = compute_ira([e for e in corpus if e.metric in (CC, CT, PP)],
                          ClassifierConfig(cset), kb)
        ira[",".join(c.value for c in cset)] = res.per_metric
    for row in rows:
        assert row["expected_ira"] == row["direct_ira"]
        per = ira[row["candidate_set"]]
        if row["pi"] == "1":
            assert row["expected_ira"] == per[CC]
        if row["pi"] == "1/3":
            assert row["expected_ira"] == (per[CC] + per[CT] + per[PP]) / 3
        assert abs(row["sampled_ira"] - float(row["expected_ira"])) < 0.15


# ---------------------------------------------------------------- figure data and reports


def test_comparison_schedules(physical_env, defaults):
    s = comparison_schedules(physical_env, 0, 24, 0.8, defaults)
    assert s["cc_status"] == s["ct_status"] == s["pp_status"] == "optimal"
    assert len(s["baseline"]) == 24 and s["tau"] >= 1


def test_emit_report(tmp_path, kb, normalized_env, defaults):
    corpus = generate_corpus(6, seed=0)
    res = compute_ira(corpus, ClassifierConfig(ALL), kb)
    results = {"ira_by_scenario": ira_rows(res), "summary": res.summary(),
               "schedules": [{"slot": 0, "cc": 0.1, "ct": 0.2, "pp": 0.3, "baseline": 0.4}]}
    files = emit_report(results, tmp_path / "a")
    assert sorted(p.name for p in files) == sorted(
        ["report.json"] + [f"{n}.csv" for n in REPORT_COLUMNS])
    emit_report(results, tmp_path / "b")
    for p in files:
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
    for name, cols in REPORT_COLUMNS.items():
        with open(tmp_path / "a" / f"{name}.csv") as fh:
            assert next(csv.reader(fh)) == cols
    with pytest.raises(ValueError):
        emit_report({}, tmp_path / "c")
