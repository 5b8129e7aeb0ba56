"""Corpus generation, intent-recognition accuracy, relative optimality loss
of misclassification, the candidate-mixture study and report files."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from chargeplan.intent import (ClassifierConfig, KnowledgeBase, OutOfSet, PromptScenario,
                               classify)
from chargeplan.llm import GatewayError
from chargeplan.model import (MAPPED_METRICS, EnvironmentSnapshot, OpClass, PerformanceMetric,
                              energy_requirement, metric_for_op, op_for_metric)
from chargeplan.parser import DefaultsBook, instantiate
from chargeplan.pipeline import constant_baseline
from chargeplan.solvers import SolveStatus, dispatch

log = logging.getLogger(__name__)

DEGENERATE_TOL = 1e-9
TIME_TOL = 1e-6
SOC_CHOICES = (60, 70, 80, 90)
DEADLINE_HOURS = (5, 6, 7, 8, 9)
DURATION_CHOICES = (6, 8, 10, 12)
MIN_TEMPLATES = 8


class EvaluationError(RuntimeError):
    pass


class InsufficientTemplates(EvaluationError):
    pass


class EmptyCorpus(EvaluationError):
    pass


class Explicitness(str, Enum):
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"


# ---------------------------------------------------------------- corpus


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    text: str
    metric: PerformanceMetric
    explicitness: Explicitness
    truth_op_class: OpClass | None
    truth_params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        metric = PerformanceMetric(self.metric)
        object.__setattr__(self, "metric", metric)
        object.__setattr__(self, "explicitness", Explicitness(self.explicitness))
        truth = None if self.truth_op_class is None else OpClass(self.truth_op_class)
        if truth != op_for_metric(metric):
            raise ValueError(f"{self.id}: label {truth} does not match metric {metric.value}")
        object.__setattr__(self, "truth_op_class", truth)

    def to_dict(self) -> dict:
        return {"id": self.id, "text": self.text, "metric": self.metric.value,
                "explicitness": self.explicitness.value,
                "truth_op_class": self.truth_op_class.value if self.truth_op_class else None,
                "truth_params": dict(self.truth_params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CorpusEntry":
        return cls(d["id"], d["text"], d["metric"], d["explicitness"], d.get("truth_op_class"),
                   d.get("truth_params", {}))


def write_corpus(entries: Iterable[CorpusEntry], path: str | Path | None = None) -> str:
    text = "".join(json.dumps(e.to_dict(), ensure_ascii=False, sort_keys=True) + "\n"
                   for e in entries)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_corpus(path: str | Path) -> list[CorpusEntry]:
    with open(path, encoding="utf-8") as fh:
        return [CorpusEntry.from_dict(json.loads(line)) for line in fh if line.strip()]


def load_templates(path: str | Path | None = None) -> dict:
    if path is None:
        text = (resources.files("chargeplan") / "data" / "templates.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return json.loads(text)


def _render(template, rng: np.random.Generator) -> tuple[str, dict]:
    if isinstance(template, Mapping):
        truth = {k: v for k, v in template.items() if k != "text"}
        return template["text"], truth
    text, truth = template, {}
    soc = int(rng.choice(SOC_CHOICES))
    hour = int(rng.choice(DEADLINE_HOURS))
    duration = int(rng.choice(DURATION_CHOICES))
    if "{SOC}" in text:
        text = text.replace("{SOC}", f"{soc}%")
        truth["soc_target"] = soc / 100
    if "{DEADLINE}" in text:
        text = text.replace("{DEADLINE}", f"by tomorrow at {hour} a.m.")
        truth["deadline_hour"] = hour
    if "{DURATION}" in text:
        text = text.replace("{DURATION}", f"{duration} hours")
        truth["duration_hours"] = duration
    return text, truth


def generate_corpus(per_metric: int, seed: int, templates: Mapping | None = None,
                    include_ei: bool = False) -> list[CorpusEntry]:
    """``per_metric`` requests per metric, explicit first then implicit
    (the explicit half gets the extra one when odd)."""
    templates = load_templates() if templates is None else templates
    metrics = list(MAPPED_METRICS) + ([PerformanceMetric.EI] if include_ei else [])
    rng = np.random.default_rng(seed)
    out = []
    for metric in metrics:
        fam = templates.get(metric.value)
        if fam is None:
            raise InsufficientTemplates(f"no templates for {metric.value}")
        counts = {Explicitness.EXPLICIT: per_metric - per_metric // 2,
                  Explicitness.IMPLICIT: per_metric // 2}
        for kind, n in counts.items():
            pool = fam.get(kind.value, [])
            if len(pool) < MIN_TEMPLATES:
                raise InsufficientTemplates(
                    f"{metric.value}/{kind.value}: {len(pool)} templates, need {MIN_TEMPLATES}")
            order = rng.permutation(len(pool))
            for i in range(n):
                text, truth = _render(pool[order[i % len(pool)]], rng)
                out.append(CorpusEntry(f"{metric.value}-{kind.value[:3]}-{i:04d}", text, metric,
                                       kind, op_for_metric(metric), truth))
    return out


# ---------------------------------------------------------------- IRA


ERROR = "error"


@dataclass
class ConfusionMatrix:
    """Counts of predicted class per true metric, plus failed calls."""

    counts: dict[PerformanceMetric, dict[OpClass, int]] = field(default_factory=dict)
    errors: dict[PerformanceMetric, int] = field(default_factory=dict)

    def add(self, metric: PerformanceMetric, predicted: OpClass | None, n: int = 1):
        metric = PerformanceMetric(metric)
        row = self.counts.setdefault(metric, {c: 0 for c in OpClass})
        self.errors.setdefault(metric, 0)
        if predicted is None:
            self.errors[metric] += n
        else:
            row[OpClass(predicted)] += n

    def row_total(self, metric: PerformanceMetric) -> int:
        metric = PerformanceMetric(metric)
        return sum(self.counts.get(metric, {}).values()) + self.errors.get(metric, 0)

    def probability(self, metric: PerformanceMetric, op: OpClass) -> float:
        """p(metric -> op) over the calls that returned a class."""
        row = self.counts.get(PerformanceMetric(metric), {})
        classified = sum(row.values())
        return row.get(OpClass(op), 0) / classified if classified else 0.0

    def metrics(self) -> list[PerformanceMetric]:
        return [m for m in PerformanceMetric if m in self.counts]

    @classmethod
    def identity(cls, metrics: Iterable[PerformanceMetric] = MAPPED_METRICS, n: int = 1):
        cm = cls()
        for m in metrics:
            cm.add(m, op_for_metric(m), n)
        return cm

    def scaled(self, k: int) -> "ConfusionMatrix":
        cm = ConfusionMatrix()
        for m, row in self.counts.items():
            for c, v in row.items():
                cm.add(m, c, k * v)
            cm.add(m, None, k * self.errors.get(m, 0))
        return cm

    def to_dict(self) -> dict:
        return {m.value: {**{c.value: self.counts[m][c] for c in OpClass},
                          ERROR: self.errors.get(m, 0)} for m in self.metrics()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConfusionMatrix":
        cm = cls()
        for m, row in d.items():
            metric = PerformanceMetric(m)
            cm.add(metric, None, 0)
            for key, v in row.items():
                cm.add(metric, None if key == ERROR else OpClass(key), int(v))
        return cm

    def csv_rows(self) -> list[dict]:
        return [{"metric": m, **row} for m, row in self.to_dict().items()]


@dataclass(frozen=True)
class Prediction:
    entry: CorpusEntry
    predicted: OpClass | None
    error: str | None = None

    @property
    def correct(self) -> bool:
        return self.predicted is not None and self.predicted == self.entry.truth_op_class


@dataclass
class IraResult:
    scenario: PromptScenario
    candidate_set: tuple[OpClass, ...]
    correct: int
    total: int
    confusion: ConfusionMatrix
    per_metric: dict[PerformanceMetric, Fraction]
    per_explicitness: dict[Explicitness, Fraction]
    out_of_knowledge: dict[str, Any]
    predictions: list[Prediction]

    @property
    def ira(self) -> float:
        return self.correct / self.total

    def summary(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "candidate_set": [c.value for c in self.candidate_set],
            "ira": self.ira, "correct": self.correct, "total": self.total,
            "per_metric": {m.value: float(v) for m, v in self.per_metric.items()},
            "per_explicitness": {k.value: float(v) for k, v in self.per_explicitness.items()},
            "out_of_knowledge": self.out_of_knowledge,
            "confusion": self.confusion.to_dict(),
        }


def _predict(entry: CorpusEntry, cfg: ClassifierConfig, kb: KnowledgeBase) -> Prediction:
    try:
        return Prediction(entry, classify(entry.text, cfg, kb).op_class)
    except (OutOfSet, GatewayError, ValueError) as exc:
        log.info("classification of %s failed: %s", entry.id, exc)
        return Prediction(entry, None, f"{type(exc).__name__}: {exc}")


def classify_corpus(corpus: Sequence[CorpusEntry], cfg: ClassifierConfig,
                    kb: KnowledgeBase) -> list[Prediction]:
    workers = max(1, cfg.backend.max_concurrency)
    if workers == 1 or len(corpus) < 2:
        return [_predict(e, cfg, kb) for e in corpus]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda e: _predict(e, cfg, kb), corpus))


def score_predictions(preds: Sequence[Prediction], cfg: ClassifierConfig,
                      ei_reference: OpClass = OpClass.LP) -> IraResult:
    labelled = [p for p in preds if p.entry.truth_op_class is not None]
    if not labelled:
        raise EmptyCorpus("no labelled entries to score")
    cm = ConfusionMatrix()
    by_metric: dict[PerformanceMetric, list[int]] = {}
    by_kind: dict[Explicitness, list[int]] = {}
    for p in labelled:
        cm.add(p.entry.metric, p.predicted)
        for table, key in ((by_metric, p.entry.metric), (by_kind, p.entry.explicitness)):
            tally = table.setdefault(key, [0, 0])
            tally[0] += p.correct
            tally[1] += 1
    ei = [p for p in preds if p.entry.truth_op_class is None]
    ei_hits = sum(p.predicted == ei_reference for p in ei)
    ook = {"total": len(ei), "reference_class": OpClass(ei_reference).value,
           "matched_reference": ei_hits, "failed": sum(p.predicted is None for p in ei),
           "accuracy": ei_hits / len(ei) if ei else None}
    correct = sum(p.correct for p in labelled)
    order = list(PerformanceMetric)
    return IraResult(
        cfg.scenario, cfg.candidate_set, correct, len(labelled), cm,
        {m: Fraction(*by_metric[m]) for m in sorted(by_metric, key=order.index)},
        {k: Fraction(*by_kind[k]) for k in Explicitness if k in by_kind},
        ook, list(preds))


def compute_ira(corpus: Sequence[CorpusEntry], cfg: ClassifierConfig, kb: KnowledgeBase,
                ei_reference: OpClass = OpClass.LP) -> IraResult:
    """Classify every entry once and tally exact matches. Failed or
    out-of-set calls count as misses (error column of the confusion matrix);
    unlabelled entries are reported apart against ``ei_reference``."""
    if not corpus:
        raise EmptyCorpus("corpus is empty")
    return score_predictions(classify_corpus(corpus, cfg, kb), cfg, ei_reference)


# ---------------------------------------------------------------- AROL


@dataclass(frozen=True)
class AbstractRequest:
    start_slot: int
    duration_slots: int
    soc_target: float

    def to_dict(self) -> dict:
        return {"start_slot": self.start_slot, "duration_slots": self.duration_slots,
                "soc_target": self.soc_target}


def min_duration_slots(env: EnvironmentSnapshot, soc_target: float) -> int:
    """Fewest slots in which full power can deliver the energy."""
    e_req = energy_requirement(soc_target, env)
    per_slot = env.bounds.x_max * env.grid.delta_t
    return max(1, math.ceil(e_req / per_slot - 1e-9))


def sample_abstract_requests(n: int, seed: int, env: EnvironmentSnapshot,
                             defaults: DefaultsBook | None = None,
                             soc_target: float | None = None) -> list[AbstractRequest]:
    """Uniform duration between the feasibility floor and the horizon, then a
    uniform start among the positions where the window fits."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if soc_target is None:
        soc_target = (defaults or DefaultsBook.load()).get("default_soc_target")
    H = env.grid.num_slots
    floor = min_duration_slots(env, soc_target)
    if floor > H:
        raise EvaluationError(f"target needs {floor} slots but data covers {H}")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        d = int(rng.integers(floor, H + 1))
        s = int(rng.integers(0, H - d + 1))
        out.append(AbstractRequest(s, d, float(soc_target)))
    return out


@dataclass(frozen=True)
class MetricContext:
    prices: np.ndarray
    load: np.ndarray
    delta_t: float
    energy: float
    exponent: float


def metric_value(metric: PerformanceMetric, x, ctx: MetricContext) -> float:
    """Cost functional of ``metric`` on any schedule for the same window."""
    x = np.asarray(x, dtype=float)
    if metric is PerformanceMetric.CC:
        return float(ctx.prices @ x * ctx.delta_t)
    if metric is PerformanceMetric.CT:
        cum = np.cumsum(x * ctx.delta_t)
        hit = np.nonzero(cum >= ctx.energy - TIME_TOL)[0]
        return float(hit[0] + 1) if hit.size else float(x.size + 1)
    if metric is PerformanceMetric.PP:
        return float(np.max(x + ctx.load))
    if metric is PerformanceMetric.PV:
        return float(np.sum(np.diff(x) ** 2))
    if metric is PerformanceMetric.GD:
        return float(np.sum(np.maximum(x + ctx.load, 0.0) ** ctx.exponent))
    raise ValueError(f"no cost functional for {metric.value}")


@dataclass
class ArolResult:
    arol: dict[PerformanceMetric, float]
    pair_loss: dict[tuple[PerformanceMetric, OpClass], float]
    used_samples: dict[PerformanceMetric, int]
    degenerate: dict[PerformanceMetric, int]
    failed: dict[PerformanceMetric, int]
    losses: list[float]
    # confusion mass on classes with no metric of their own (LQR): not scored
    unscored_mass: dict[PerformanceMetric, float] = field(default_factory=dict)

    @property
    def min_loss(self) -> float:
        return min(self.losses) if self.losses else 0.0

    def rows(self) -> list[dict]:
        return [{"metric": m.value, "arol": self.arol[m], "samples": self.used_samples[m],
                 "degenerate": self.degenerate[m], "failed": self.failed[m],
                 "unscored_mass": self.unscored_mass.get(m, 0.0)}
                for m in self.arol]


def _solve_sample(req: AbstractRequest, classes: set[OpClass], env, defaults):
    out = {}
    for op_class in sorted(classes, key=list(OpClass).index):
        op = instantiate(op_class, env, req.start_slot, req.duration_slots, req.soc_target,
                         defaults)
        res = dispatch(op)
        out[op_class] = res.schedule.values if res.status is SolveStatus.OPTIMAL else None
    return out


def arol_for_requests(confusion: ConfusionMatrix, requests: Sequence[AbstractRequest],
                      env: EnvironmentSnapshot, defaults: DefaultsBook,
                      metrics: Sequence[PerformanceMetric] | None = None,
                      workers: int = 1) -> ArolResult:
    """Weighted relative loss of solving the wrong class, averaged over
    ``requests``. Samples whose true optimum is (near) zero are skipped and
    counted; so are samples where a needed solve fails.

    A wrong class is solved as the EV problem of the metric it stands for.
    Classes that stand for no metric have nothing to solve; their share of
    the row is returned as ``unscored_mass`` instead of entering the sum.
    """
    metrics = [m for m in (metrics or confusion.metrics()) if op_for_metric(m) is not None]
    weights = {m: {J: confusion.probability(m, J) for J in OpClass
                   if J is not op_for_metric(m) and metric_for_op(J) is not None
                   and confusion.probability(m, J) > 0}
               for m in metrics}
    unscored = {m: float(sum(confusion.probability(m, J) for J in OpClass
                             if metric_for_op(J) is None)) for m in metrics}
    needed = {op_for_metric(m) for m in metrics} | {J for w in weights.values() for J in w}
    exponent = defaults.get("grid_damage_exponent")

    def one(req):
        return _solve_sample(req, needed, env, defaults)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            solved = list(pool.map(one, requests))
    else:
        solved = [one(r) for r in requests]

    sums = {(m, J): 0.0 for m in metrics for J in weights[m]}
    used = {m: 0 for m in metrics}
    degenerate = {m: 0 for m in metrics}
    failed = {m: 0 for m in metrics}
    losses = []
    for req, sols in zip(requests, solved):
        sl = slice(req.start_slot, req.start_slot + req.duration_slots)
        ctx = MetricContext(env.prices[sl], env.non_flexible_load[sl], env.grid.delta_t,
                            energy_requirement(req.soc_target, env), exponent)
        for m in metrics:
            x_i = sols[op_for_metric(m)]
            if x_i is None or any(sols[J] is None for J in weights[m]):
                failed[m] += 1
                continue
            f_i = metric_value(m, x_i, ctx)
            if abs(f_i) <= DEGENERATE_TOL:
                degenerate[m] += 1
                continue
            used[m] += 1
            for J in weights[m]:
                loss = (metric_value(m, sols[J], ctx) - f_i) / f_i
                sums[(m, J)] += loss
                losses.append(loss)
    pair = {k: (v / used[k[0]] if used[k[0]] else 0.0) for k, v in sums.items()}
    arol = {m: float(sum(weights[m][J] * pair[(m, J)] for J in weights[m])) for m in metrics}
    for m in metrics:
        if degenerate[m]:
            log.warning("%s: %d degenerate samples skipped", m.value, degenerate[m])
    return ArolResult(arol, pair, used, degenerate, failed, losses, unscored)


def compute_arol(confusion: ConfusionMatrix, n_samples: int, seed: int,
                 env: EnvironmentSnapshot, defaults: DefaultsBook,
                 metrics: Sequence[PerformanceMetric] | None = None,
                 workers: int = 1) -> ArolResult:
    requests = sample_abstract_requests(n_samples, seed, env, defaults)
    return arol_for_requests(confusion, requests, env, defaults, metrics, workers)


# ---------------------------------------------------------------- mixture


MIXTURE_METRICS = (PerformanceMetric.CC, PerformanceMetric.CT, PerformanceMetric.PP)


def mixture_weights(pi: Fraction) -> dict[PerformanceMetric, Fraction]:
    pi = Fraction(pi)
    if not 0 <= pi <= 1:
        raise ValueError(f"pi must lie in [0, 1], got {pi}")
    rest = (1 - pi) / 2
    return {PerformanceMetric.CC: pi, PerformanceMetric.CT: rest, PerformanceMetric.PP: rest}


def mixture_study(pi_values: Sequence, corpus: Sequence[CorpusEntry],
                  candidate_sets: Sequence[Sequence[OpClass]], cfg: ClassifierConfig,
                  kb: KnowledgeBase, n_draws: int = 1000, seed: int = 0) -> list[dict]:
    """Accuracy on a CC/CT/PP request mix weighted pi, (1-pi)/2, (1-pi)/2.

    Three numbers per (candidate set, pi): the formula on per-metric
    accuracies, the same expectation summed entry by entry, and a Monte
    Carlo estimate from ``n_draws`` sampled requests.
    """
    entries = [e for e in corpus if e.metric in MIXTURE_METRICS]
    groups = {m: [e for e in entries if e.metric is m] for m in MIXTURE_METRICS}
    empty = [m.value for m, g in groups.items() if not g]
    if empty:
        raise EmptyCorpus(f"no entries for {', '.join(empty)}")
    rows = []
    for cset in candidate_sets:
        ccfg = ClassifierConfig(tuple(cset), cfg.scenario, cfg.backend)
        res = compute_ira(entries, ccfg, kb)
        hit = {p.entry.id: p.correct for p in res.predictions}
        for pi in pi_values:
            pi = Fraction(pi)
            w = mixture_weights(pi)
            expected = sum(w[m] * res.per_metric[m] for m in MIXTURE_METRICS)
            direct = sum((w[e.metric] / len(groups[e.metric]) for e in entries if hit[e.id]),
                         Fraction(0))
            rng = np.random.default_rng([seed, pi.numerator, pi.denominator])
            probs = np.array([float(w[m]) for m in MIXTURE_METRICS])
            draws = rng.choice(len(MIXTURE_METRICS), size=n_draws, p=probs / probs.sum())
            sampled = np.mean([hit[groups[MIXTURE_METRICS[k]][rng.integers(
                len(groups[MIXTURE_METRICS[k]]))].id] for k in draws])
            rows.append({"candidate_set": ",".join(c.value for c in ccfg.candidate_set),
                         "pi": str(pi), "expected_ira": expected, "direct_ira": direct,
                         "sampled_ira": float(sampled), "n_draws": n_draws})
    return rows


# ---------------------------------------------------------------- figure data


def comparison_schedules(env: EnvironmentSnapshot, start_slot: int, num_slots: int,
                         soc_target: float, defaults: DefaultsBook) -> dict:
    """Cost, time and peak optimal schedules plus the flat baseline on one window."""
    out = {}
    for key, op_class in (("cc", OpClass.LP), ("ct", OpClass.LMT), ("pp", OpClass.MM)):
        op = instantiate(op_class, env, start_slot, num_slots, soc_target, defaults)
        res = dispatch(op)
        out[key] = res.schedule.values
        if op_class is OpClass.LMT:
            out["tau"] = int(res.aux["tau"])
        out[f"{key}_status"] = res.status.value
        baseline_op = op
    e_req = energy_requirement(soc_target, env)
    out["baseline"] = constant_baseline(baseline_op, e_req).values
    return out


def schedule_rows(schedules: Mapping) -> list[dict]:
    n = len(schedules["baseline"])
    return [{"slot": t, "cc": float(schedules["cc"][t]), "ct": float(schedules["ct"][t]),
             "pp": float(schedules["pp"][t]), "baseline": float(schedules["baseline"][t])}
            for t in range(n)]


# ---------------------------------------------------------------- reports


REPORT_COLUMNS = {
    "ira_by_scenario": ["scenario", "metric", "correct", "total", "ira"],
    "arol_by_scenario": ["scenario", "metric", "arol", "samples", "degenerate", "failed",
                         "unscored_mass"],
    "ira_by_candidate_set": ["scenario", "candidate_set", "metric", "correct", "total", "ira"],
    "mixture": ["candidate_set", "pi", "expected_ira", "direct_ira", "sampled_ira", "n_draws"],
    "schedules": ["slot", "cc", "ct", "pp", "baseline"],
}


def ira_rows(res: IraResult) -> list[dict]:
    rows = []
    for m in res.per_metric:
        preds = [p for p in res.predictions if p.entry.metric is m]
        correct = sum(p.correct for p in preds)
        rows.append({"scenario": res.scenario.value, "metric": m.value, "correct": correct,
                     "total": len(preds), "ira": correct / len(preds)})
    rows.append({"scenario": res.scenario.value, "metric": "ALL", "correct": res.correct,
                 "total": res.total, "ira": res.ira})
    return rows


def _json_default(v):
    if isinstance(v, Fraction):
        return float(v)
    if isinstance(v, Enum):
        return v.value
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _cell(v):
    if isinstance(v, Fraction):
        v = float(v)
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def emit_report(results: Mapping[str, Any], path: str | Path) -> list[Path]:
    """Write report.json plus one CSV per table in REPORT_COLUMNS (header
    only when the table is absent). Output is a pure function of ``results``."""
    if not results:
        raise ValueError("nothing to report")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "report.json"]
    written[0].write_text(json.dumps(results, indent=2, sort_keys=True, default=_json_default)
                          + "\n", encoding="utf-8")
    for name, cols in REPORT_COLUMNS.items():
        target = out / f"{name}.csv"
        with open(target, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(cols)
            for row in results.get(name, []):
                writer.writerow([_cell(row.get(c)) for c in cols])
        written.append(target)
    return written
