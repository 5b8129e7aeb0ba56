"""Request classifier: builds the system prompt from the knowledge base and
asks the model to pick one problem class through a single tool call."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from chargeplan.llm import (BackendConfig, ChatMessage, Role, ToolSpec, chat,
                            extract_tool_call)
from chargeplan.model import OpClass


class MissingKnowledge(LookupError):
    pass


class OutOfSet(ValueError):
    def __init__(self, returned: str, candidate_set: Sequence[OpClass]):
        self.returned = returned
        self.candidate_set = tuple(candidate_set)
        allowed = ",".join(c.value for c in candidate_set)
        super().__init__(f"model chose {returned!r}, allowed: {allowed}")


class PromptScenario(str, Enum):
    BASIC = "basic"
    CONTEXTUALIZED = "contextualized"
    ERROR_INFORMED = "error-informed"


SCENARIO_ORDER = (PromptScenario.BASIC, PromptScenario.CONTEXTUALIZED,
                  PromptScenario.ERROR_INFORMED)


@dataclass(frozen=True)
class KnowledgeEntry:
    math: str | None = None
    ev_context: str | None = None
    remarks: str | None = None


@dataclass(frozen=True)
class KnowledgeBase:
    entries: Mapping[OpClass, KnowledgeEntry]

    _FILES = {"math": "math.md", "ev_context": "ev_context.md", "remarks": "remarks.md"}

    @classmethod
    def load(cls, root: str | Path | None = None) -> "KnowledgeBase":
        """One directory per class (named like ``LP``); a missing file means
        the block is absent. Defaults to the packaged knowledge base."""
        base = Path(root) if root is not None else Path(str(resources.files("chargeplan") / "data" / "kb"))
        entries = {}
        for op in OpClass:
            folder = base / op.value
            blocks = {}
            for key, fname in cls._FILES.items():
                path = folder / fname
                blocks[key] = path.read_text(encoding="utf-8").strip() if path.is_file() else None
            entries[op] = KnowledgeEntry(**blocks)
        return cls(entries)

    def entry(self, op: OpClass) -> KnowledgeEntry:
        return self.entries.get(op, KnowledgeEntry())

    def without_context(self, ops: Iterable[OpClass]) -> "KnowledgeBase":
        """Copy with the EV context and remarks dropped for ``ops``
        (used to probe out-of-knowledge requests)."""
        drop = set(ops)
        entries = {op: (KnowledgeEntry(math=e.math) if op in drop else e)
                   for op, e in self.entries.items()}
        return KnowledgeBase(entries)


@dataclass(frozen=True)
class ClassifierConfig:
    candidate_set: tuple[OpClass, ...]
    scenario: PromptScenario = PromptScenario.BASIC
    backend: BackendConfig = field(default_factory=BackendConfig)

    def __post_init__(self):
        ops = tuple(dict.fromkeys(OpClass(c) for c in self.candidate_set))
        if not ops:
            raise ValueError("candidate set must not be empty")
        object.__setattr__(self, "candidate_set", ops)
        object.__setattr__(self, "scenario", PromptScenario(self.scenario))

    def with_scenario(self, scenario: PromptScenario) -> "ClassifierConfig":
        return replace(self, scenario=PromptScenario(scenario))


@dataclass(frozen=True)
class ClassificationResult:
    op_class: OpClass
    raw_response: ChatMessage
    scenario: PromptScenario
    candidate_set: tuple[OpClass, ...]

    def to_dict(self) -> dict:
        return {"op_class": self.op_class.value, "scenario": self.scenario.value,
                "candidate_set": [c.value for c in self.candidate_set],
                "raw_response": self.raw_response.to_dict()}


def classify_tool(candidate_set: Sequence[OpClass]) -> ToolSpec:
    return ToolSpec(
        name="classify_op",
        description="Record the optimization problem class that matches the user's request.",
        parameters={
            "type": "object",
            "properties": {"op_class": {"type": "string",
                                        "enum": [c.value for c in candidate_set]}},
            "required": ["op_class"],
        },
    )


_HEADER = ("You help an electric-vehicle owner schedule charging. Each request states, "
           "openly or between the lines, what the owner cares about. Your job is to decide "
           "which optimization problem class below should be solved for it.")


def _instruction(candidate_set: Sequence[OpClass]) -> str:
    names = ", ".join(c.value for c in candidate_set)
    return (f"Answer by calling the tool classify_op exactly once, with op_class set to one "
            f"of: {names}. Do not answer in plain text.")


def _section(title: str, blocks: list[tuple[OpClass, str]]) -> str:
    body = "\n\n".join(f"[{op.value}]\n{text}" for op, text in blocks)
    return f"## {title}\n\n{body}"


def build_system_prompt(cfg: ClassifierConfig, kb: KnowledgeBase) -> str:
    """Layered prompt: each richer scenario appends to the previous one, and
    every variant closes with the tool instruction."""
    ops = cfg.candidate_set
    missing = [op.value for op in ops if not kb.entry(op).math]
    if missing:
        raise MissingKnowledge(f"no math block for {', '.join(missing)}")
    instruction = _instruction(ops)
    parts = [_HEADER, _section("Problem classes", [(op, kb.entry(op).math) for op in ops]),
             instruction]
    level = SCENARIO_ORDER.index(cfg.scenario)
    if level >= 1:
        ctx = [(op, kb.entry(op).ev_context) for op in ops if kb.entry(op).ev_context]
        if ctx:
            parts.append(_section("What each class means for EV charging", ctx))
        parts.append(instruction)
    if level >= 2:
        rem = [(op, kb.entry(op).remarks) for op in ops if kb.entry(op).remarks]
        if rem:
            parts.append(_section("Common mistakes to avoid", rem))
        parts.append(instruction)
    return "\n\n".join(parts)


def classify(request_text: str, cfg: ClassifierConfig, kb: KnowledgeBase) -> ClassificationResult:
    if not request_text or not request_text.strip():
        raise ValueError("request text is empty")
    tool = classify_tool(cfg.candidate_set)
    messages = [ChatMessage(Role.SYSTEM, build_system_prompt(cfg, kb)),
                ChatMessage(Role.USER, request_text)]
    reply = chat(cfg.backend, messages, [tool])
    try:
        call = extract_tool_call(reply, tool)
    except Exception as exc:
        # a value outside the enum is reported as such rather than as a schema error
        for c in reply.tool_calls:
            value = c.arguments.get("op_class") if c.name == tool.name else None
            if isinstance(value, str) and value not in {o.value for o in cfg.candidate_set}:
                raise OutOfSet(value, cfg.candidate_set) from exc
        raise
    op = OpClass(call.arguments["op_class"])
    if op not in cfg.candidate_set:
        raise OutOfSet(op.value, cfg.candidate_set)
    return ClassificationResult(op, reply, cfg.scenario, cfg.candidate_set)
