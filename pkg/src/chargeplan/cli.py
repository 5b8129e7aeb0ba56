"""Command-line entry point.

Settings are resolved per key in this order: command-line flag, then the
LLM_BASE_URL / LLM_MODEL environment variables, then the JSON file given by
--config (or CHARGEPLAN_CONFIG), then built-in defaults. JSON and CSV go to
stdout or to files under --out; logs go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from fractions import Fraction
from importlib import resources
from pathlib import Path

from chargeplan import evaluation as ev
from chargeplan.intent import ClassifierConfig, KnowledgeBase, PromptScenario, classify
from chargeplan.llm import BackendConfig, BackendKind, GatewayError
from chargeplan.model import load_environment, parse_op_classes
from chargeplan.parser import DefaultsBook, ParseError, window_slots
from chargeplan.pipeline import StageError, run

log = logging.getLogger("chargeplan")

EXIT_OK, EXIT_STAGE, EXIT_USAGE = 0, 1, 2

BACKENDS = {"mock": BackendKind.MOCK, "openai": BackendKind.OPENAI_COMPATIBLE,
            "ollama": BackendKind.OLLAMA_NATIVE}

BUILTIN = {
    "env": "fixtures/normalized.json",
    "backend": "mock",
    "base_url": "http://localhost:11434",
    "model": "llama3:8b",
    "scenario": "error-informed",
    "classes": "LP,QP,MM,CP,LMT,LQR",
    "seed": 0,
    "timeout": 120.0,
    "max_concurrency": 4,
    "kb": None,
    "defaults": None,
}

ENV_VARS = {"base_url": "LLM_BASE_URL", "model": "LLM_MODEL"}


class UsageError(ValueError):
    pass


def _common() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subparser from resetting flags given before the subcommand
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    g = p.add_argument_group("common options")
    g.add_argument("--env", help="environment JSON, or fixtures/<name> for a shipped one")
    g.add_argument("--backend", choices=sorted(BACKENDS))
    g.add_argument("--base-url", dest="base_url")
    g.add_argument("--model")
    g.add_argument("--scenario", choices=[s.value for s in PromptScenario])
    g.add_argument("--classes", help="candidate classes, e.g. LP,LMT,MM")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="directory for output files (default: stdout)")
    g.add_argument("--config", help="JSON file with default settings")
    g.add_argument("--kb", help="knowledge-base directory")
    g.add_argument("--defaults", help="defaults JSON file")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    p = argparse.ArgumentParser(
        prog="chargeplan", parents=[common],
        description="Turn EV charging requests into optimal power schedules.",
        epilog="Precedence: flags > LLM_BASE_URL/LLM_MODEL > --config file > defaults.",
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("classify", parents=[common], help="print the chosen problem class")
    s.add_argument("text")

    s = sub.add_parser("schedule", parents=[common], help="run the full request pipeline")
    s.add_argument("text")
    s.add_argument("--csv", help="also write cost/time/peak/baseline schedules to this CSV")
    s.add_argument("--assist", action="store_true", help="ask the model for a solver start")

    s = sub.add_parser("evaluate", parents=[common], help="intent accuracy on a corpus")
    s.add_argument("--corpus", required=True, help="JSONL corpus")
    s.add_argument("--scenarios", help="comma list of scenarios (default: --scenario)")
    s.add_argument("--arol-samples", type=int, default=0,
                   help="also compute the optimality loss with this many samples")

    s = sub.add_parser("arol", parents=[common], help="optimality loss from a confusion matrix")
    s.add_argument("--confusion", required=True,
                   help="confusion JSON, or a report.json written by evaluate")
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("gen-corpus", parents=[common], help="generate a labelled corpus")
    s.add_argument("--per-metric", type=int, required=True)
    s.add_argument("--include-ei", action="store_true")
    s.add_argument("--templates")

    s = sub.add_parser("mixture", parents=[common], help="accuracy on CC/CT/PP mixtures")
    s.add_argument("--pi", nargs="+", required=True, help="values such as 0 1/3 0.5 1")
    s.add_argument("--corpus", help="JSONL corpus (default: generated)")
    s.add_argument("--per-metric", type=int, default=20)
    s.add_argument("--candidate-sets", nargs="+", help="e.g. LP,LMT LP,LMT,MM")
    s.add_argument("--draws", type=int, default=1000)
    return p


# ---------------------------------------------------------------- settings


def resolve_settings(args: argparse.Namespace) -> dict:
    cfg_path = getattr(args, "config", None) or os.environ.get("CHARGEPLAN_CONFIG")
    file_cfg = {}
    if cfg_path:
        try:
            file_cfg = json.loads(Path(cfg_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {cfg_path}: {exc}") from exc
        unknown = set(file_cfg) - set(BUILTIN)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for key, default in BUILTIN.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in ENV_VARS and os.environ.get(ENV_VARS[key]):
            out[key] = os.environ[ENV_VARS[key]]
        elif key in file_cfg:
            out[key] = file_cfg[key]
        else:
            out[key] = default
    if out["backend"] not in BACKENDS:
        raise UsageError(f"unknown backend {out['backend']!r}")
    return out


def resolve_env_path(name: str) -> Path:
    path = Path(name)
    if path.is_file():
        return path
    packaged = Path(str(resources.files("chargeplan") / "data" / "fixtures")) / path.name
    if packaged.is_file():
        return packaged
    raise UsageError(f"environment file {name!r} not found")


def _backend(st: dict) -> BackendConfig:
    return BackendConfig(kind=BACKENDS[st["backend"]], base_url=st["base_url"],
                         model_name=st["model"], timeout=float(st["timeout"]),
                         max_concurrency=int(st["max_concurrency"]))


def _classifier(st: dict, scenario=None) -> ClassifierConfig:
    try:
        classes = parse_op_classes(st["classes"])
    except ValueError as exc:
        raise UsageError(f"bad --classes: {exc}") from exc
    return ClassifierConfig(classes, PromptScenario(scenario or st["scenario"]), _backend(st))


def _emit(args, name: str, payload) -> None:
    text = payload if isinstance(payload, str) else json.dumps(
        payload, indent=2, sort_keys=True, default=ev._json_default) + "\n"
    if getattr(args, "out", None):
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text, encoding="utf-8")
        log.info("wrote %s", out / name)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- commands


def cmd_classify(args, st) -> int:
    res = classify(args.text, _classifier(st), KnowledgeBase.load(st["kb"]))
    _emit(args, "classification.json", res.to_dict())
    return EXIT_OK


def cmd_schedule(args, st) -> int:
    env = load_environment(resolve_env_path(st["env"]))
    defaults = DefaultsBook.load(st["defaults"])
    out = run(args.text, env, _classifier(st), KnowledgeBase.load(st["kb"]), defaults,
              assist=args.assist)
    _emit(args, "run_record.json", out.record())
    if args.csv:
        soc = out.parameters.soc_target or defaults.get("default_soc_target")
        k0, T = window_slots(out.parameters.time, env)
        rows = ev.schedule_rows(ev.comparison_schedules(env, k0, T, soc, defaults))
        _write_csv(Path(args.csv), ev.REPORT_COLUMNS["schedules"], rows)
    if not out.solve_result.optimal:
        log.error("solver finished with status %s", out.solve_result.status.value)
        return EXIT_STAGE
    return EXIT_OK


def _write_csv(path: Path, cols, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([ev._cell(r.get(c)) for c in cols])


def _scenarios(args, st):
    if getattr(args, "scenarios", None):
        try:
            return [PromptScenario(s.strip()) for s in args.scenarios.split(",") if s.strip()]
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    return [PromptScenario(st["scenario"])]


def cmd_evaluate(args, st) -> int:
    try:
        corpus = ev.read_corpus(args.corpus)
    except OSError as exc:
        raise UsageError(f"cannot read corpus: {exc}") from exc
    kb = KnowledgeBase.load(st["kb"])
    results = {"ira": [], "ira_by_scenario": [], "ira_by_candidate_set": [],
               "arol_by_scenario": []}
    env = defaults = None
    if args.arol_samples:
        env = load_environment(resolve_env_path(st["env"]))
        defaults = DefaultsBook.load(st["defaults"])
    for scenario in _scenarios(args, st):
        cfg = _classifier(st, scenario)
        res = ev.compute_ira(corpus, cfg, kb)
        results["ira"].append(res.summary())
        results["ira_by_scenario"].extend(ev.ira_rows(res))
        cset = ",".join(c.value for c in cfg.candidate_set)
        results["ira_by_candidate_set"].extend(
            {**row, "candidate_set": cset} for row in ev.ira_rows(res))
        if args.arol_samples:
            arol = ev.compute_arol(res.confusion, args.arol_samples, int(st["seed"]), env,
                                   defaults)
            results["arol_by_scenario"].extend(
                {"scenario": scenario.value, **row} for row in arol.rows())
        log.info("%s: IRA %.3f (%d/%d)", scenario.value, res.ira, res.correct, res.total)
    if getattr(args, "out", None):
        ev.emit_report(results, args.out)
    else:
        _emit(args, "report.json", results)
    return EXIT_OK


def _load_confusion(path: str, scenario: str) -> ev.ConfusionMatrix:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read confusion file: {exc}") from exc
    if "ira" in data:
        chosen = next((r for r in data["ira"] if r["scenario"] == scenario), data["ira"][0])
        data = chosen["confusion"]
    elif "confusion" in data:
        data = data["confusion"]
    return ev.ConfusionMatrix.from_dict(data)


def cmd_arol(args, st) -> int:
    cm = _load_confusion(args.confusion, st["scenario"])
    env = load_environment(resolve_env_path(st["env"]))
    res = ev.compute_arol(cm, args.samples, int(st["seed"]), env, DefaultsBook.load(st["defaults"]),
                          workers=args.workers)
    rows = [{"scenario": st["scenario"], **r} for r in res.rows()]
    if getattr(args, "out", None):
        ev.emit_report({"arol_by_scenario": rows}, args.out)
    else:
        _emit(args, "report.json", {"arol_by_scenario": rows})
    return EXIT_OK


def cmd_gen_corpus(args, st) -> int:
    if args.per_metric < 1:
        raise UsageError("--per-metric must be positive")
    templates = ev.load_templates(args.templates) if args.templates else None
    corpus = ev.generate_corpus(args.per_metric, int(st["seed"]), templates, args.include_ei)
    _emit(args, "corpus.jsonl", ev.write_corpus(corpus))
    return EXIT_OK


def cmd_mixture(args, st) -> int:
    try:
        pis = [Fraction(p) for p in args.pi]
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"bad --pi value: {exc}") from exc
    if args.corpus:
        corpus = ev.read_corpus(args.corpus)
    else:
        corpus = ev.generate_corpus(args.per_metric, int(st["seed"]))
    cfg = _classifier(st)
    try:
        sets = ([parse_op_classes(s) for s in args.candidate_sets] if args.candidate_sets
                else [cfg.candidate_set])
    except ValueError as exc:
        raise UsageError(f"bad candidate set: {exc}") from exc
    rows = ev.mixture_study(pis, corpus, sets, cfg, KnowledgeBase.load(st["kb"]),
                            n_draws=args.draws, seed=int(st["seed"]))
    if getattr(args, "out", None):
        ev.emit_report({"mixture": rows}, args.out)
    else:
        _emit(args, "report.json", {"mixture": rows})
    return EXIT_OK


COMMANDS = {"classify": cmd_classify, "schedule": cmd_schedule, "evaluate": cmd_evaluate,
            "arol": cmd_arol, "gen-corpus": cmd_gen_corpus, "mixture": cmd_mixture}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        st = resolve_settings(args)
        return COMMANDS[args.command](args, st)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"chargeplan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"chargeplan: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (GatewayError, ParseError, ev.EvaluationError, ValueError, ArithmeticError) as exc:
        print(f"chargeplan: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
