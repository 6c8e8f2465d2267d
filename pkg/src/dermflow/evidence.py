"""Shared domain types: queries, scopes, tool calls, plans, evidence and responses.

All value types are frozen dataclasses. The evidence chain is extended only by
producing a new chain, so snapshots can be handed to concurrent tool calls.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from .exceptions import TraceFormatError, ValidationError

TOOL_IDS = (
    "panderm",
    "make",
    "dermo_gpt",
    "qwen_vl",
    "case_rag",
    "guideline_rag",
    "ontology",
)
SCORED_TOOLS = frozenset({"panderm", "case_rag", "guideline_rag"})
RETRIEVAL_TOOLS = frozenset({"case_rag", "guideline_rag"})
ONTOLOGY_MODES = ("hierarchy", "children", "siblings", "search")

# key -> (kind, required)
PARAM_SCHEMAS: dict[str, dict[str, tuple[str, bool]]] = {
    "panderm": {"candidates": ("labels", True)},
    "make": {"features": ("labels", True)},
    "dermo_gpt": {"question": ("text", True)},
    "qwen_vl": {"question": ("text", True)},
    "case_rag": {"k": ("count", False)},
    "guideline_rag": {"query": ("text", True)},
    "ontology": {"mode": ("mode", True), "name": ("text", True)},
}


class TaskType(str, Enum):
    DIAGNOSIS = "diagnosis"
    CONCEPT_ANNOTATION = "concept_annotation"
    CAPTIONING = "captioning"
    GENERAL_VQA = "general_vqa"


class Gate(str, Enum):
    CONFIDENCE = "confidence"
    COVERAGE = "coverage"
    CONFLICT = "conflict"


def _check_kind(tool_id: str, key: str, kind: str, value: Any) -> None:
    where = f"{tool_id}.{key}"
    if kind == "text":
        if not isinstance(value, str) or not value.strip():
            raise ValidationError(f"{where}: expected non-empty string, got {value!r}")
    elif kind == "labels":
        if not isinstance(value, list) or not value:
            raise ValidationError(f"{where}: expected non-empty list of strings")
        for v in value:
            if not isinstance(v, str) or not v.strip():
                raise ValidationError(f"{where}: bad entry {v!r}")
    elif kind == "count":
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ValidationError(f"{where}: expected positive integer, got {value!r}")
    elif kind == "mode":
        if value not in ONTOLOGY_MODES:
            raise ValidationError(f"{where}: unknown mode {value!r}")


def validate_params(tool_id: str, params: Mapping[str, Any]) -> None:
    if tool_id not in PARAM_SCHEMAS:
        raise ValidationError(f"unknown tool_id {tool_id!r}")
    if not isinstance(params, Mapping):
        raise ValidationError(f"{tool_id}: params must be a mapping")
    schema = PARAM_SCHEMAS[tool_id]
    for key in params:
        if key not in schema:
            raise ValidationError(f"{tool_id}: unexpected parameter {key!r}")
    for key, (kind, required) in schema.items():
        if key not in params:
            if required:
                raise ValidationError(f"{tool_id}: missing parameter {key!r}")
            continue
        _check_kind(tool_id, key, kind, params[key])


def _canonical(value: Any) -> Any:
    if isinstance(value, str):
        return value.casefold()
    if isinstance(value, Mapping):
        return {k: _canonical(value[k]) for k in sorted(value)}
    if isinstance(value, (list, tuple)):
        items = [_canonical(v) for v in value]
        return sorted(items, key=lambda v: json.dumps(v, sort_keys=True))
    return value


def canonical_params(params: Mapping[str, Any]) -> str:
    """Stable string form of params: sorted keys, casefolded strings, sorted lists."""
    return json.dumps(_canonical(params), sort_keys=True, separators=(",", ":"))


def dumps_line(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class Query:
    image_ref: str
    question: str
    attach_image: bool = True

    def __post_init__(self):
        if not isinstance(self.question, str) or not self.question.strip():
            raise ValidationError("question must be non-empty")
        if self.attach_image and not Path(self.image_ref).is_file():
            raise ValidationError(f"image {self.image_ref!r} is not a readable file")

    def read_image(self) -> bytes | None:
        if not self.attach_image:
            return None
        return Path(self.image_ref).read_bytes()


@dataclass(frozen=True)
class TaskScope:
    task_type: TaskType
    required_tools: frozenset[str]
    actionable_tools: tuple[str, ...]

    def __post_init__(self):
        missing = set(self.required_tools) - set(self.actionable_tools)
        if missing:
            raise ValidationError(f"required tools not actionable: {sorted(missing)}")

    def restrict(self, enabled: Iterable[str]) -> "TaskScope":
        """Drop tools that are not enabled (leave-one-out ablation)."""
        enabled = set(enabled)
        return TaskScope(
            self.task_type,
            frozenset(t for t in self.required_tools if t in enabled),
            tuple(t for t in self.actionable_tools if t in enabled),
        )


@dataclass(frozen=True)
class ToolCall:
    tool_id: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        validate_params(self.tool_id, self.params)
        object.__setattr__(self, "params", copy.deepcopy(dict(self.params)))

    def key(self) -> tuple[str, str]:
        return self.tool_id, canonical_params(self.params)

    def to_dict(self) -> dict:
        return {"tool": self.tool_id, "params": copy.deepcopy(self.params)}


@dataclass(frozen=True)
class Plan:
    round: int
    calls: tuple[ToolCall, ...]

    def __post_init__(self):
        if self.round < 0:
            raise ValidationError("plan round must be non-negative")
        object.__setattr__(self, "calls", tuple(self.calls))
        if not self.calls:
            raise ValidationError("plan must contain at least one call")

    def to_wire(self) -> str:
        return json.dumps([c.to_dict() for c in self.calls], sort_keys=True)


@dataclass(frozen=True)
class ToolOutput:
    """What a tool returns; the executor stamps seq/round/params onto it."""

    result: Any
    confidence: float | None = None
    sources: tuple[str, ...] = ()

    def to_item(self, seq: int, round: int, call: ToolCall) -> "EvidenceItem":
        return EvidenceItem(seq, round, call.tool_id, call.params, self.result,
                            self.confidence, tuple(self.sources))


@dataclass(frozen=True)
class EvidenceItem:
    seq: int
    round: int
    tool_id: str
    params: dict
    result: Any
    confidence: float | None = None
    sources: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "params", copy.deepcopy(dict(self.params)))
        object.__setattr__(self, "result", copy.deepcopy(self.result))
        object.__setattr__(self, "sources", tuple(self.sources))
        self.validate()

    @property
    def failed(self) -> bool:
        return isinstance(self.result, dict) and "error" in self.result

    @property
    def call(self) -> ToolCall:
        return ToolCall(self.tool_id, self.params)

    def validate(self) -> None:
        if self.tool_id not in TOOL_IDS:
            raise ValidationError(f"unknown tool_id {self.tool_id!r}")
        if self.seq < 0 or self.round < 0:
            raise ValidationError("seq and round must be non-negative")
        validate_params(self.tool_id, self.params)
        if self.confidence is not None:
            if isinstance(self.confidence, bool) or not 0.0 <= self.confidence <= 1.0:
                raise ValidationError(f"confidence {self.confidence!r} outside [0, 1]")
        for s in self.sources:
            if not isinstance(s, str) or not s:
                raise ValidationError(f"bad source {s!r}")
        if self.failed:
            if self.confidence is not None:
                raise ValidationError("failed items carry no confidence")
            return
        if self.tool_id in SCORED_TOOLS and self.confidence is None:
            raise ValidationError(f"{self.tool_id} evidence requires a confidence")
        if self.tool_id in RETRIEVAL_TOOLS and not self.sources:
            raise ValidationError(f"{self.tool_id} evidence requires sources")

    def to_record(self) -> dict:
        rec = {
            "seq": self.seq,
            "round": self.round,
            "tool_id": self.tool_id,
            "params": self.params,
            "result": self.result,
            "sources": list(self.sources),
        }
        if self.confidence is not None:
            rec["confidence"] = self.confidence
        return rec

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "EvidenceItem":
        try:
            return cls(
                seq=rec["seq"],
                round=rec["round"],
                tool_id=rec["tool_id"],
                params=rec["params"],
                result=rec["result"],
                confidence=rec.get("confidence"),
                sources=tuple(rec["sources"]),
            )
        except KeyError as exc:
            raise TraceFormatError(f"trace record missing field {exc}") from None


@dataclass(frozen=True)
class EvidenceChain:
    items: tuple[EvidenceItem, ...] = ()

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]

    @property
    def next_seq(self) -> int:
        return self.items[-1].seq + 1 if self.items else 0

    def by_tool(self, tool_id: str, *, successful: bool = False) -> list[EvidenceItem]:
        return [
            it for it in self.items
            if it.tool_id == tool_id and not (successful and it.failed)
        ]

    def latest(self, tool_id: str) -> EvidenceItem | None:
        found = self.by_tool(tool_id, successful=True)
        return found[-1] if found else None

    def invoked_tools(self) -> set[str]:
        return {it.tool_id for it in self.items}

    def call_keys(self) -> set[tuple[str, str]]:
        return {(it.tool_id, canonical_params(it.params)) for it in self.items}

    def sources(self) -> list[str]:
        seen: dict[str, None] = {}
        for it in self.items:
            for s in it.sources:
                seen.setdefault(s, None)
        return list(seen)


def append_evidence(chain: EvidenceChain, item: EvidenceItem) -> EvidenceChain:
    """Return a new chain with ``item`` appended; the old chain is untouched."""
    item.validate()
    if chain.items:
        last = chain.items[-1]
        if item.round < last.round:
            raise ValidationError(f"item round {item.round} precedes round {last.round}")
        if item.seq <= last.seq:
            raise ValidationError(f"item seq {item.seq} not after {last.seq}")
    return EvidenceChain(chain.items + (item,))


@dataclass(frozen=True)
class Feedback:
    gate: Gate
    message: str
    suggested_calls: tuple[ToolCall, ...] = ()
    reinject_image: bool = False

    def __post_init__(self):
        object.__setattr__(self, "gate", Gate(self.gate))
        object.__setattr__(self, "suggested_calls", tuple(self.suggested_calls))

    def to_record(self) -> dict:
        return {
            "gate": self.gate.value,
            "message": self.message,
            "suggested_calls": [c.to_dict() for c in self.suggested_calls],
            "reinject_image": self.reinject_image,
        }


@dataclass(frozen=True)
class Response:
    answer: str
    evidence: EvidenceChain
    rounds_used: int
    citations: tuple[str, ...] = ()
    status: str = "success"
    events: tuple[dict, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "citations", tuple(self.citations))
        known = set(self.evidence.sources())
        stray = [c for c in self.citations if c not in known]
        if stray:
            raise ValidationError(f"citations not backed by evidence: {stray}")

    def trace_bytes(self) -> bytes:
        """Full run trace: round markers, evidence records and critic verdicts."""
        return "".join(dumps_line(e) + "\n" for e in self.events).encode("utf-8")


def serialize_trace(chain: EvidenceChain) -> bytes:
    return "".join(dumps_line(it.to_record()) + "\n" for it in chain).encode("utf-8")


def parse_trace(data: bytes | str) -> EvidenceChain:
    """Rebuild a chain from trace lines. Event lines (round markers, critic) are skipped."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    chain = EvidenceChain()
    for lineno, line in enumerate(data.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"line {lineno}: {exc}") from None
        if not isinstance(rec, dict):
            raise TraceFormatError(f"line {lineno}: expected an object")
        if "event" in rec:
            continue
        try:
            chain = append_evidence(chain, EvidenceItem.from_record(rec))
        except ValidationError as exc:
            raise TraceFormatError(f"line {lineno}: {exc}") from None
    return chain
