"""Planning backends for the chatbot node, and the plan wire format.

The wire form of a plan is a JSON array of ``{"tool": id, "params": {...}}``
objects. Chatty model output is tolerated: the first well-formed array found
(fenced blocks first) is used.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .evidence import (
    TOOL_IDS,
    EvidenceChain,
    Feedback,
    Plan,
    Query,
    TaskScope,
    TaskType,
    ToolCall,
)
from .exceptions import (
    PlanExhausted,
    PlannerError,
    PlanParseError,
    SynthesisError,
    TransportError,
    ValidationError,
)
from .findings import best_diagnosis, describe
from .wire import RemoteEndpoint, extract_json, remote_chat

SYNTH_ORDER = TOOL_IDS


@dataclass(frozen=True)
class PlannerContext:
    scope: TaskScope
    chain: EvidenceChain
    feedback: tuple[Feedback, ...]
    query: Query
    round: int = 0
    image_payload: bytes | None = None

    def __post_init__(self):
        object.__setattr__(self, "feedback", tuple(self.feedback))
        if self.query.attach_image and self.image_payload is None and self.wants_image:
            raise ValidationError("image payload required on round 0 and after a reinject request")

    @property
    def wants_image(self) -> bool:
        return self.round == 0 or any(f.reinject_image for f in self.feedback)


@dataclass(frozen=True)
class PlanDocument:
    raw: str
    parsed: Plan


def parse_plan_document(raw: str, round: int = 0) -> Plan:
    if not raw or not raw.strip():
        raise PlanParseError("empty plan document", raw)
    block = extract_json(raw, list)
    if block is None:
        raise PlanParseError("no structured plan block found", raw)
    calls = []
    for entry in block:
        if not isinstance(entry, dict) or "tool" not in entry:
            raise PlanParseError(f"plan entry is not a tool call: {entry!r}", raw)
        tool = entry["tool"]
        if tool not in TOOL_IDS:
            raise ValidationError(f"plan names unknown tool {tool!r}")
        calls.append(ToolCall(tool, entry.get("params", {})))
    if not calls:
        raise PlanParseError("plan block is empty", raw)
    return Plan(round, tuple(calls))


def serialize_plan(plan: Plan) -> str:
    return plan.to_wire()


def _dedupe(calls, chain: EvidenceChain, allowed) -> list[ToolCall]:
    seen = chain.call_keys()
    out = []
    for call in calls:
        if call.tool_id not in allowed:
            continue
        key = call.key()
        if key in seen:
            continue
        seen.add(key)
        out.append(call)
    return out


def _round0_calls(scope: TaskScope, query: Query, defaults) -> list[ToolCall]:
    q = query.question
    d = defaults
    if scope.task_type is TaskType.DIAGNOSIS:
        return [d.call("panderm"), d.call("case_rag"), ToolCall("dermo_gpt", {"question": q})]
    if scope.task_type is TaskType.CONCEPT_ANNOTATION:
        return [d.call("make"), ToolCall("dermo_gpt", {"question": q})]
    if scope.task_type is TaskType.CAPTIONING:
        return [d.call("dermo_gpt"), d.call("panderm"), d.call("make"), d.call("case_rag")]
    return [ToolCall("qwen_vl", {"question": q})]


def template_answer(chain: EvidenceChain, normalize=None) -> str:
    """One line per tool in fixed order, then the highest-confidence diagnosis."""
    if not len(chain):
        raise SynthesisError("cannot synthesize from an empty evidence chain")
    lines = []
    for tool in SYNTH_ORDER:
        items = chain.by_tool(tool)
        if not items:
            continue
        item = chain.latest(tool) or items[-1]
        line = f"{tool}: {describe(item)}"
        if item.confidence is not None:
            line += f" ({item.confidence:.2f})"
        lines.append(line)
    best = best_diagnosis(chain, normalize)
    lines.append(f"Diagnosis: {best[0] if best else 'undetermined'}")
    return "\n".join(lines)


class RuleBasedPlanner:
    """Deterministic offline planner: fixed round-0 policy, then critic suggestions."""

    def __init__(self, defaults, ontology=None):
        self.defaults = defaults
        self.ontology = ontology

    def _normalize(self):
        return self.ontology.canonical if self.ontology is not None else None

    def plan(self, ctx: PlannerContext) -> Plan:
        allowed = set(ctx.scope.actionable_tools)
        if ctx.round == 0 and not len(ctx.chain):
            calls = _dedupe(_round0_calls(ctx.scope, ctx.query, self.defaults), ctx.chain, allowed)
            if not calls:
                fallback = [self.defaults.call(t, ctx.chain, ctx.query.question) for t in ctx.scope.actionable_tools]
                calls = _dedupe([c for c in fallback if c is not None][:1], ctx.chain, allowed)
        else:
            suggested = [c for fb in ctx.feedback for c in fb.suggested_calls]
            calls = _dedupe(suggested, ctx.chain, allowed)
        if not calls:
            raise PlanExhausted(f"no new tool calls available in round {ctx.round}")
        return Plan(ctx.round, tuple(calls))

    def synthesize(self, chain: EvidenceChain, query: Query) -> str:
        return template_answer(chain, self._normalize())


PLAN_SYSTEM_PROMPT = (
    "You coordinate dermatology tools. Reply with a JSON array of tool calls, each "
    '{{"tool": <id>, "params": {{...}}}}. Available tools:\n{tools}'
)
SYNTH_SYSTEM_PROMPT = (
    "Write an evidence-grounded answer to the question using only the evidence given. "
    "End with a line 'Diagnosis: <label>'."
)


def evidence_summary(chain: EvidenceChain) -> str:
    return "\n".join(
        f"[{it.seq}] r{it.round} {it.tool_id} {json.dumps(it.params, sort_keys=True)} -> {describe(it)}"
        + (f" (conf {it.confidence:.2f})" if it.confidence is not None else "")
        for it in chain
    ) or "(none)"


class RemotePlanner:
    """Chat-model planner. Critic suggestions are merged into whatever the model proposes."""

    def __init__(self, endpoint: RemoteEndpoint, defaults, descriptors=(), *, client=None,
                 plan_prompt: str = PLAN_SYSTEM_PROMPT, synth_prompt: str = SYNTH_SYSTEM_PROMPT,
                 max_parse_attempts: int = 2):
        self.endpoint = endpoint
        self.defaults = defaults
        self.descriptors = list(descriptors)
        self.client = client
        self.plan_prompt = plan_prompt
        self.synth_prompt = synth_prompt
        self.max_parse_attempts = max_parse_attempts

    def _messages(self, ctx: PlannerContext) -> list[dict]:
        tools = "\n".join(
            f"- {d.tool_id}: {d.description} params={json.dumps(d.param_schema, sort_keys=True)}"
            for d in self.descriptors if d.tool_id in ctx.scope.actionable_tools
        )
        feedback = "\n".join(f"- [{f.gate.value}] {f.message}" for f in ctx.feedback) or "(none)"
        user = (
            f"Question: {ctx.query.question}\nTask type: {ctx.scope.task_type.value}\n"
            f"Round: {ctx.round}\nEvidence so far:\n{evidence_summary(ctx.chain)}\n"
            f"Critic feedback:\n{feedback}"
        )
        return [
            {"role": "system", "content": self.plan_prompt.format(tools=tools)},
            {"role": "user", "content": user},
        ]

    def plan_document(self, ctx: PlannerContext) -> PlanDocument:
        last_error = None
        for _ in range(self.max_parse_attempts):
            try:
                raw = remote_chat(self._messages(ctx), ctx.image_payload, self.endpoint, client=self.client)
            except TransportError as exc:
                raise PlannerError(f"planner endpoint failed: {exc}") from exc
            try:
                return PlanDocument(raw, parse_plan_document(raw, ctx.round))
            except (PlanParseError, ValidationError) as exc:
                last_error = exc
        raise last_error

    def plan(self, ctx: PlannerContext) -> Plan:
        doc = self.plan_document(ctx)
        suggested = [c for fb in ctx.feedback for c in fb.suggested_calls]
        calls = _dedupe([*doc.parsed.calls, *suggested], ctx.chain, set(ctx.scope.actionable_tools))
        if not calls:
            raise PlanExhausted(f"no new tool calls available in round {ctx.round}")
        return Plan(ctx.round, tuple(calls))

    def synthesize(self, chain: EvidenceChain, query: Query) -> str:
        if not len(chain):
            raise SynthesisError("cannot synthesize from an empty evidence chain")
        messages = [
            {"role": "system", "content": self.synth_prompt},
            {"role": "user", "content": f"Question: {query.question}\nEvidence:\n{evidence_summary(chain)}"},
        ]
        try:
            return remote_chat(messages, None, self.endpoint, client=self.client)
        except TransportError as exc:
            raise SynthesisError(f"synthesis endpoint failed: {exc}") from exc
