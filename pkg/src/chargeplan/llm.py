"""Chat + function-calling client for OpenAI-style and Ollama-style endpoints,
with a deterministic in-process mock backend for offline runs."""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

import httpx
import jsonschema

from chargeplan.model import OpClass

log = logging.getLogger(__name__)


class GatewayError(RuntimeError):
    pass


class TransportError(GatewayError):
    pass


class ProtocolError(GatewayError):
    pass


class ModelRefusal(GatewayError):
    pass


class NoToolCall(GatewayError):
    pass


class SchemaViolation(GatewayError):
    def __init__(self, tool: str, problems: Sequence[str]):
        self.tool = tool
        self.problems = list(problems)
        super().__init__(f"{tool}: " + "; ".join(self.problems))


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"


@dataclass(frozen=True)
class ToolCall:
    id: str
    name: str
    arguments: Mapping[str, Any]


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str = ""
    tool_calls: tuple[ToolCall, ...] = ()
    tool_call_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "tool_calls", tuple(self.tool_calls))

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"role": self.role.value, "content": self.content}
        if self.tool_calls:
            out["tool_calls"] = [{"id": c.id, "name": c.name, "arguments": dict(c.arguments)}
                                 for c in self.tool_calls]
        if self.tool_call_id is not None:
            out["tool_call_id"] = self.tool_call_id
        return out


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameters: Mapping[str, Any]

    def wire(self) -> dict:
        return {"type": "function",
                "function": {"name": self.name, "description": self.description,
                             "parameters": dict(self.parameters)}}


class BackendKind(str, Enum):
    OPENAI_COMPATIBLE = "openai_compatible"
    OLLAMA_NATIVE = "ollama_native"
    MOCK = "mock"


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind = BackendKind.MOCK
    base_url: str = "http://localhost:11434"
    model_name: str = "llama3:8b"
    temperature: float = 0.0
    timeout: float = 120.0
    max_retries: int = 2
    backoff: float = 0.5  # seconds, doubled per retry
    max_concurrency: int = 4
    # extra mock keywords, e.g. (("LP", "financially"),)
    mock_keywords: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", BackendKind(self.kind))

    def with_env_overrides(self) -> "BackendConfig":
        """Apply LLM_BASE_URL / LLM_MODEL from the environment."""
        changes = {}
        if os.environ.get("LLM_BASE_URL"):
            changes["base_url"] = os.environ["LLM_BASE_URL"]
        if os.environ.get("LLM_MODEL"):
            changes["model_name"] = os.environ["LLM_MODEL"]
        return replace(self, **changes) if changes else self


# ---------------------------------------------------------------- limiter

_limiters: dict[tuple, threading.BoundedSemaphore] = {}
_limiters_lock = threading.Lock()


def _limiter(cfg: BackendConfig) -> threading.BoundedSemaphore:
    key = (cfg.kind, cfg.base_url, cfg.model_name)
    with _limiters_lock:
        if key not in _limiters:
            _limiters[key] = threading.BoundedSemaphore(max(1, cfg.max_concurrency))
        return _limiters[key]


# ---------------------------------------------------------------- chat


def _check_conversation(messages: Sequence[ChatMessage], tools: Sequence[ToolSpec]):
    if not messages:
        raise ValueError("messages must not be empty")
    if messages[0].role is not Role.SYSTEM:
        raise ValueError("the first message must be the system prompt")
    names = [t.name for t in tools]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate tool names: {names}")
    seen_ids: set[str] = set()
    for m in messages:
        seen_ids.update(c.id for c in m.tool_calls)
        if m.role is Role.TOOL and m.tool_call_id not in seen_ids:
            raise ValueError(f"tool message refers to unknown call {m.tool_call_id!r}")


def chat(cfg: BackendConfig, messages: Sequence[ChatMessage],
         tools: Sequence[ToolSpec] = ()) -> ChatMessage:
    """One assistant turn. Raises TransportError, ProtocolError or ModelRefusal."""
    messages = list(messages)
    tools = list(tools)
    _check_conversation(messages, tools)
    if cfg.kind is BackendKind.MOCK:
        reply = mock_reply(messages, tools, cfg)
    else:
        with _limiter(cfg):
            reply = _http_chat(cfg, messages, tools)
    if not reply.content.strip() and not reply.tool_calls:
        raise ModelRefusal("model returned neither content nor a tool call")
    return reply


def _wire_messages(messages: Sequence[ChatMessage], dialect: BackendKind) -> list[dict]:
    out = []
    for m in messages:
        d: dict[str, Any] = {"role": m.role.value, "content": m.content}
        if m.tool_calls:
            calls = []
            for c in m.tool_calls:
                fn = {"name": c.name,
                      "arguments": json.dumps(dict(c.arguments))
                      if dialect is BackendKind.OPENAI_COMPATIBLE else dict(c.arguments)}
                calls.append({"id": c.id, "type": "function", "function": fn})
            d["tool_calls"] = calls
        if m.tool_call_id is not None:
            d["tool_call_id"] = m.tool_call_id
        out.append(d)
    return out


def build_request(cfg: BackendConfig, messages: Sequence[ChatMessage],
                  tools: Sequence[ToolSpec]) -> tuple[str, dict]:
    """URL and JSON body for the configured wire dialect."""
    base = cfg.base_url.rstrip("/")
    wire_tools = [t.wire() for t in tools]
    msgs = _wire_messages(messages, cfg.kind)
    if cfg.kind is BackendKind.OPENAI_COMPATIBLE:
        body = {"model": cfg.model_name, "temperature": cfg.temperature, "messages": msgs}
        if wire_tools:
            body["tools"] = wire_tools
        return f"{base}/v1/chat/completions", body
    if cfg.kind is BackendKind.OLLAMA_NATIVE:
        body = {"model": cfg.model_name, "options": {"temperature": cfg.temperature},
                "messages": msgs, "stream": False}
        if wire_tools:
            body["tools"] = wire_tools
        return f"{base}/api/chat", body
    raise ValueError(f"{cfg.kind} has no wire format")


def _parse_arguments(raw) -> dict:
    if isinstance(raw, Mapping):
        return dict(raw)
    if raw is None or raw == "":
        return {}
    try:
        value = json.loads(raw)
    except (TypeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"tool-call arguments are not JSON: {raw!r}") from exc
    if not isinstance(value, dict):
        raise ProtocolError(f"tool-call arguments must be a JSON object, got {raw!r}")
    return value


def parse_response(kind: BackendKind, payload: Any) -> ChatMessage:
    try:
        if kind is BackendKind.OPENAI_COMPATIBLE:
            msg = payload["choices"][0]["message"]
        else:
            msg = payload["message"]
        raw_calls = msg.get("tool_calls") or []
        calls = []
        for i, c in enumerate(raw_calls):
            fn = c["function"]
            calls.append(ToolCall(id=str(c.get("id") or f"call_{i}"), name=str(fn["name"]),
                                  arguments=_parse_arguments(fn.get("arguments"))))
        return ChatMessage(Role.ASSISTANT, msg.get("content") or "", tuple(calls))
    except ProtocolError:
        raise
    except (KeyError, IndexError, TypeError, AttributeError) as exc:
        raise ProtocolError(f"unexpected response shape: {exc!r}") from exc


def _http_chat(cfg: BackendConfig, messages, tools) -> ChatMessage:
    url, body = build_request(cfg, messages, tools)
    last_error: Exception | None = None
    for attempt in range(cfg.max_retries + 1):
        if attempt:
            time.sleep(cfg.backoff * 2 ** (attempt - 1))
        try:
            resp = httpx.post(url, json=body, timeout=cfg.timeout)
        except httpx.TransportError as exc:
            last_error = exc
            log.warning("transport error on attempt %d: %s", attempt + 1, exc)
            continue
        if resp.status_code >= 500 or resp.status_code == 429:
            last_error = TransportError(f"HTTP {resp.status_code} from {url}")
            log.warning("HTTP %d on attempt %d", resp.status_code, attempt + 1)
            continue
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
        try:
            payload = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"response is not JSON: {resp.text[:200]!r}") from exc
        return parse_response(cfg.kind, payload)
    raise TransportError(f"giving up after {cfg.max_retries + 1} attempts: {last_error}")


# ---------------------------------------------------------------- tool calls


def schema_problems(schema: Mapping, arguments: Any) -> list[str]:
    validator = jsonschema.Draft202012Validator(schema)
    problems = []
    for err in sorted(validator.iter_errors(arguments), key=lambda e: list(e.absolute_path)):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        problems.append(f"{where}: {err.message}")
    return problems


def extract_tool_call(msg: ChatMessage, expected: ToolSpec) -> ToolCall:
    """First call to ``expected`` in ``msg``, with arguments schema-checked."""
    for call in msg.tool_calls:
        if call.name == expected.name:
            problems = schema_problems(expected.parameters, dict(call.arguments))
            if problems:
                raise SchemaViolation(expected.name, problems)
            return call
    names = [c.name for c in msg.tool_calls]
    raise NoToolCall(f"expected a call to {expected.name}, got {names or 'none'}")


# ---------------------------------------------------------------- mock backend

# priority order matters: the first class with a matching keyword wins
KEYWORD_TABLE: tuple[tuple[OpClass, tuple[str, ...]], ...] = (
    (OpClass.LP, ("cost", "price", "bill", "cheap")),
    (OpClass.LMT, ("time", "fast", "quick", "asap", "as soon as possible")),
    (OpClass.MM, ("peak", "breaker", "installation limit")),
    (OpClass.QP, ("smooth", "variation", "fluctuation")),
    (OpClass.CP, ("grid", "damage", "transformer", "aging", "ageing")),
    (OpClass.LQR, ("target tracking", "regulat")),
)


def _keyword_pattern(word: str) -> re.Pattern:
    parts = [re.escape(p) for p in word.split()]
    return re.compile(r"\b" + r"\s+".join(parts), re.IGNORECASE)


def mock_rules(request_text: str, candidate_set: Iterable[OpClass],
               extra_keywords: Iterable[tuple[str, str]] = ()) -> OpClass:
    """Keyword classifier standing in for the intent model offline.

    Keywords match at word starts, so "cheap" also hits "cheapest". With no
    match, the candidate earliest in the canonical class order is returned.
    """
    candidates = [OpClass(c) for c in candidate_set]
    if not candidates:
        raise ValueError("candidate set must not be empty")
    extras: dict[OpClass, list[str]] = {}
    for cls, word in extra_keywords:
        extras.setdefault(OpClass(cls), []).append(word)
    for cls, words in KEYWORD_TABLE:
        if cls not in candidates:
            continue
        for word in (*words, *extras.get(cls, ())):
            if _keyword_pattern(word).search(request_text):
                return cls
    order = list(OpClass)
    return min(candidates, key=order.index)


_PERCENT = re.compile(r"(\d{1,3}(?:\.\d+)?)\s*(?:%|percent\b)", re.IGNORECASE)
_DURATION = re.compile(
    r"\b(?:for|within|in|next|have|got)?\s*(\d+(?:\.\d+)?)\s*(?:h\b|hrs?\b|hours?\b)",
    re.IGNORECASE)
_CLOCK = (r"(?:\d{1,2}(?::\d{2})?\s*(?:a\.?m\.?|p\.?m\.?)(?![a-z])|\d{1,2}:\d{2}|noon|midnight)")
_DAYPART = r"(?:morning|evening|tonight|night|afternoon)"
_DEADLINE = re.compile(
    r"\b(?:by|before|until|till|for|at)?\s*"
    r"((?:tomorrow|today|tonight)(?:\s+(?:morning|evening|afternoon|night))?(?:\s+(?:at|by)\s+"
    + _CLOCK + r")?|(?:this|tomorrow)\s+" + _DAYPART + r"|" + _CLOCK + r"(?:\s+tomorrow)?)",
    re.IGNORECASE)


def mock_time_arguments(text: str) -> dict:
    """Regex stand-in for the parser model: pulls a duration and/or a
    deadline phrase out of ``text``; resolution happens downstream."""
    args: dict[str, Any] = {}
    m = _DURATION.search(text)
    if m:
        args["duration_hours"] = float(m.group(1))
    d = _DEADLINE.search(text)
    if d:
        args["end"] = re.sub(r"\s+", " ", d.group(1).strip())
    return args


def mock_soc_arguments(text: str) -> dict:
    m = _PERCENT.search(text)
    if not m:
        return {}
    return {"soc_target_percent": float(m.group(1))}


def _last_user_text(messages: Sequence[ChatMessage]) -> str:
    for m in reversed(messages):
        if m.role is Role.USER:
            return m.content
    return ""


def _mock_start(text: str) -> dict | None:
    try:
        start = text.index("{")
        info = json.loads(text[start:text.rindex("}") + 1])
        T = int(info["num_slots"])
        level = float(info["energy_kwh"]) / (T * float(info["delta_t"]))
    except (ValueError, KeyError, TypeError, ZeroDivisionError):
        return None
    return {"values": [level] * T}


def mock_reply(messages: Sequence[ChatMessage], tools: Sequence[ToolSpec],
               cfg: BackendConfig | None = None) -> ChatMessage:
    """Deterministic reply: a pure function of (messages, tools)."""
    text = _last_user_text(messages)
    extra = cfg.mock_keywords if cfg is not None else ()
    by_name = {t.name: t for t in tools}
    if "classify_op" in by_name:
        enum = by_name["classify_op"].parameters["properties"]["op_class"].get("enum", [])
        choice = mock_rules(text, [OpClass(e) for e in enum] or list(OpClass), extra)
        args: dict | None = {"op_class": choice.value}
        name = "classify_op"
    elif "set_time_parameters" in by_name:
        name, args = "set_time_parameters", mock_time_arguments(text)
    elif "set_soc_target" in by_name:
        name, args = "set_soc_target", mock_soc_arguments(text)
    elif "suggest_start" in by_name:
        name, args = "suggest_start", _mock_start(text)
    else:
        name, args = None, None
    if name is None or args is None:
        return ChatMessage(Role.ASSISTANT, "I have no suggestion for this request.")
    return ChatMessage(Role.ASSISTANT, "", (ToolCall("call_0", name, args),))
