"""Plan / execute / reflect loop over the planner, the tool registry and the critic."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FuturesTimeout
from dataclasses import dataclass, field

from .critic import REQUIRED_TOOLS, CriticThresholds
from .evidence import (
    TOOL_IDS,
    EvidenceChain,
    EvidenceItem,
    Feedback,
    Plan,
    Query,
    Response,
    TaskScope,
    TaskType,
    append_evidence,
)
from .exceptions import (
    ConfigurationError,
    OrchestrationError,
    PlanExhausted,
    PlannerError,
    PlanParseError,
    TransportError,
    ValidationError,
)
from .planner import PlannerContext

logger = logging.getLogger(__name__)

DEFAULT_K_MAX = 2
DEFAULT_TIMEOUT = 60.0
DEFAULT_PARALLELISM = 4

# First match wins, in this order; anything else is general VQA.
TASK_RULES = (
    (TaskType.DIAGNOSIS, ("diagnos", "what disease", "what condition", "identify")),
    (TaskType.CONCEPT_ANNOTATION, ("concept", "feature", "dermoscopic structure", "annotate")),
    (TaskType.CAPTIONING, ("caption", "describe", "report")),
)

ACTIONABLE_TOOLS = {
    TaskType.DIAGNOSIS: ("panderm", "case_rag", "dermo_gpt", "guideline_rag", "ontology"),
    TaskType.CONCEPT_ANNOTATION: ("make", "dermo_gpt", "panderm", "guideline_rag"),
    TaskType.CAPTIONING: ("dermo_gpt", "panderm", "make", "case_rag", "guideline_rag"),
    TaskType.GENERAL_VQA: ("qwen_vl", "dermo_gpt", "guideline_rag", "ontology"),
}

PHASES = ("analyzing", "planning", "executing", "reflecting", "synthesizing", "done")
_NEXT = {
    "analyzing": {"planning"},
    "planning": {"executing", "synthesizing"},
    "executing": {"reflecting"},
    "reflecting": {"planning", "synthesizing"},
    "synthesizing": {"done"},
    "done": set(),
}


def classify_question(question: str) -> TaskType:
    q = question.casefold()
    for task, keys in TASK_RULES:
        if any(k in q for k in keys):
            return task
    return TaskType.GENERAL_VQA


def analyze_task(query: Query | str) -> TaskScope:
    question = query.question if isinstance(query, Query) else query
    if not isinstance(question, str) or not question.strip():
        raise ValidationError("question must be non-empty")
    task = classify_question(question)
    return TaskScope(task, REQUIRED_TOOLS[task], ACTIONABLE_TOOLS[task])


@dataclass(frozen=True)
class OrchestratorConfig:
    k_max: int = DEFAULT_K_MAX
    enabled_tools: frozenset = frozenset(TOOL_IDS)
    thresholds: CriticThresholds = field(default_factory=CriticThresholds)
    parallelism_limit: int = DEFAULT_PARALLELISM
    call_timeout: float = DEFAULT_TIMEOUT
    ablation: bool = False

    def __post_init__(self):
        object.__setattr__(self, "enabled_tools", frozenset(self.enabled_tools))
        if self.k_max < 0:
            raise ConfigurationError("k_max must be >= 0")
        if not self.enabled_tools:
            raise ConfigurationError("enabled_tools is empty")
        unknown = self.enabled_tools - set(TOOL_IDS)
        if unknown:
            raise ConfigurationError(f"unknown tools enabled: {sorted(unknown)}")
        if self.parallelism_limit < 1:
            raise ConfigurationError("parallelism_limit must be >= 1")
        if not self.ablation:
            for task, req in REQUIRED_TOOLS.items():
                missing = req - self.enabled_tools
                if missing:
                    raise ConfigurationError(
                        f"{task.value} requires {sorted(missing)}; enable them or turn on ablation mode"
                    )


@dataclass
class RunState:
    scope: TaskScope | None = None
    k: int = 0
    chain: EvidenceChain = field(default_factory=EvidenceChain)
    feedback: list[Feedback] = field(default_factory=list)
    phase: str = "analyzing"
    history: list[str] = field(default_factory=lambda: ["analyzing"])

    def advance(self, phase: str) -> None:
        if phase not in _NEXT[self.phase]:
            raise OrchestrationError(f"illegal phase transition {self.phase} -> {phase}", self.chain)
        self.phase = phase
        self.history.append(phase)


def _failed_item(seq: int, round: int, call, kind: str, message: str) -> EvidenceItem:
    return EvidenceItem(seq, round, call.tool_id, call.params, {"error": {"type": kind, "message": message}})


def execute_round(plan: Plan, registry, chain: EvidenceChain, image_ref: str, *,
                  timeout: float = DEFAULT_TIMEOUT, parallelism: int = DEFAULT_PARALLELISM,
                  executor: ThreadPoolExecutor | None = None) -> EvidenceChain:
    """Run every call of ``plan`` (concurrently), appending one item per call in plan order.

    A call that raises or exceeds ``timeout`` becomes a failed item; the round
    never aborts. Calls beyond the first ``parallelism`` wait for a free worker,
    so each wave of workers gets its own timeout window.
    """
    own = executor is None
    if own:
        executor = ThreadPoolExecutor(max_workers=min(parallelism, len(plan.calls)))
    try:
        t0 = time.monotonic()
        futures = [executor.submit(registry.dispatch, call, image_ref) for call in plan.calls]
        for i, (call, fut) in enumerate(zip(plan.calls, futures)):
            seq = chain.next_seq
            deadline = t0 + timeout * (i // parallelism + 1)
            try:
                out = fut.result(timeout=max(0.0, deadline - time.monotonic()))
                item = out.to_item(seq, plan.round, call)
            except FuturesTimeout:
                fut.cancel()
                item = _failed_item(seq, plan.round, call, "timeout", f"no result within {timeout:g}s")
            except Exception as exc:  # tool errors are evidence, not crashes
                item = _failed_item(seq, plan.round, call, type(exc).__name__, str(exc))
            chain = append_evidence(chain, item)
    finally:
        if own:
            executor.shutdown(wait=False, cancel_futures=True)
    return chain


def synthesize(chain: EvidenceChain, query: Query, planner, *, rounds_used: int | None = None,
               status: str = "success", events=()) -> Response:
    answer = planner.synthesize(chain, query)
    if rounds_used is None:
        rounds_used = (chain[-1].round + 1) if len(chain) else 0
    return Response(answer, chain, rounds_used, tuple(chain.sources()), status, tuple(events))


class Orchestrator:
    def __init__(self, config: OrchestratorConfig, planner, registry, critic):
        self.config = config
        self.planner = planner
        self.registry = registry
        self.critic = critic

    def run(self, query: Query) -> Response:
        cfg = self.config
        state = RunState()
        state.scope = analyze_task(query).restrict(cfg.enabled_tools)
        scope = state.scope
        unregistered = [t for t in sorted(scope.required_tools) if t not in self.registry]
        if unregistered:
            raise ConfigurationError(f"required tools not registered: {unregistered}")
        runnable = {t for t in cfg.enabled_tools if t in self.registry}

        events: list[dict] = [{
            "event": "scope",
            "task_type": scope.task_type.value,
            "required_tools": sorted(scope.required_tools),
            "actionable_tools": list(scope.actionable_tools),
        }]
        image = query.read_image()
        rounds = 0
        verdict = None
        pool = ThreadPoolExecutor(max_workers=cfg.parallelism_limit)
        try:
            while True:
                state.advance("planning")
                ctx = PlannerContext(
                    scope, state.chain, tuple(state.feedback), query, state.k,
                    image if (state.k == 0 or any(f.reinject_image for f in state.feedback)) else None,
                )
                try:
                    plan = self.planner.plan(ctx)
                except PlanExhausted as exc:
                    logger.info("round %d: %s", state.k, exc)
                    break
                except (PlannerError, PlanParseError, ValidationError, TransportError) as exc:
                    raise OrchestrationError(f"planning failed in round {state.k}: {exc}", state.chain) from exc
                if plan.round != state.k:
                    raise OrchestrationError(f"plan round {plan.round} != retry counter {state.k}", state.chain)
                calls = tuple(c for c in plan.calls if c.tool_id in runnable)
                if len(calls) != len(plan.calls):
                    logger.warning("dropping calls to disabled or unregistered tools")
                if not calls:
                    break
                plan = Plan(plan.round, calls)

                state.advance("executing")
                events.append({"event": "round_start", "k": state.k})
                before = len(state.chain)
                state.chain = execute_round(plan, self.registry, state.chain, query.image_ref,
                                            timeout=cfg.call_timeout, parallelism=cfg.parallelism_limit,
                                            executor=pool)
                events.extend(it.to_record() for it in state.chain.items[before:])
                rounds += 1

                state.advance("reflecting")
                verdict = self.critic.evaluate(state.chain, scope)
                events.append(verdict.to_record(state.k))
                events.append({"event": "round_end", "k": state.k})
                if verdict.flagged and state.k < cfg.k_max:
                    state.feedback.extend(verdict.feedback)
                    state.k += 1
                    continue
                break
        finally:
            pool.shutdown(wait=False, cancel_futures=True)

        if not len(state.chain):
            raise OrchestrationError("no tool call could be planned", state.chain)
        state.advance("synthesizing")
        incomplete = (verdict is None or verdict.flagged) or any(it.failed for it in state.chain)
        status = "partial" if incomplete else "success"
        response = synthesize(state.chain, query, self.planner, rounds_used=rounds, status=status)
        events.append({
            "event": "response",
            "answer": response.answer,
            "rounds_used": rounds,
            "status": status,
            "citations": list(response.citations),
        })
        state.advance("done")
        self.last_state = state
        return Response(response.answer, response.evidence, rounds, response.citations, status, tuple(events))


def run(query: Query, config: OrchestratorConfig, planner, registry, critic) -> Response:
    return Orchestrator(config, planner, registry, critic).run(query)
