"""Deterministic three-gate audit of the evidence chain: confidence, coverage, conflict."""

from __future__ import annotations

from dataclasses import dataclass

from .evidence import EvidenceChain, Feedback, Gate, TaskScope, TaskType, ToolCall
from .exceptions import ValidationError
from .findings import top_label

REQUIRED_TOOLS = {
    TaskType.DIAGNOSIS: frozenset({"panderm", "case_rag"}),
    TaskType.CONCEPT_ANNOTATION: frozenset({"make"}),
    TaskType.CAPTIONING: frozenset({"dermo_gpt", "panderm"}),
    TaskType.GENERAL_VQA: frozenset(),
}

_RAG_TOOLS = ("case_rag", "guideline_rag")


@dataclass(frozen=True)
class CriticThresholds:
    panderm_min_conf: float = 0.90
    rag_min_sim: float = 0.80

    def __post_init__(self):
        for name in ("panderm_min_conf", "rag_min_sim"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class CriticVerdict:
    f_conf: bool
    f_cov: bool
    f_con: bool
    feedback: tuple[Feedback, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "feedback", tuple(self.feedback))
        if bool(self.feedback) != self.flagged:
            raise ValidationError("feedback must be present exactly when a gate fires")
        raised = {g for g, f in zip(Gate, (self.f_conf, self.f_cov, self.f_con)) if f}
        for fb in self.feedback:
            if fb.gate not in raised:
                raise ValidationError(f"feedback for gate {fb.gate.value} which did not fire")

    @property
    def flagged(self) -> bool:
        return self.f_conf or self.f_cov or self.f_con

    @property
    def flags(self) -> tuple[bool, bool, bool]:
        return self.f_conf, self.f_cov, self.f_con

    def to_record(self, k: int) -> dict:
        return {
            "event": "critic",
            "k": k,
            "f_conf": self.f_conf,
            "f_cov": self.f_cov,
            "f_con": self.f_con,
            "feedback": [f.to_record() for f in self.feedback],
        }


def _uninvoked(chain: EvidenceChain, scope: TaskScope) -> list[str]:
    invoked = chain.invoked_tools()
    return [t for t in scope.actionable_tools if t not in invoked]


def check_confidence(chain: EvidenceChain, scope: TaskScope, thresholds: CriticThresholds) -> bool:
    low = False
    for item in chain:
        if item.confidence is None:
            continue
        if item.tool_id == "panderm" and item.confidence < thresholds.panderm_min_conf:
            low = True
        elif item.tool_id in _RAG_TOOLS and item.confidence < thresholds.rag_min_sim:
            low = True
    return low and bool(_uninvoked(chain, scope))


def missing_required(scope: TaskScope, chain: EvidenceChain, enabled=None) -> list[str]:
    """Required tools with no successful evidence item, in actionable order."""
    done = {it.tool_id for it in chain if not it.failed}
    required = scope.required_tools if enabled is None else scope.required_tools & set(enabled)
    ordered = [t for t in scope.actionable_tools if t in required]
    ordered += sorted(required - set(ordered))
    return [t for t in ordered if t not in done]


def check_coverage(scope: TaskScope, chain: EvidenceChain, enabled=None) -> bool:
    return bool(missing_required(scope, chain, enabled))


def _normalizer(ontology):
    if ontology is None:
        return lambda s: " ".join(s.casefold().split())
    return ontology.canonical


def conflict_pair(chain: EvidenceChain, ontology=None) -> tuple[str, str] | None:
    """``(classifier label, case label)`` when they disagree and no guideline query covers both."""
    norm = _normalizer(ontology)
    pan, case = chain.latest("panderm"), chain.latest("case_rag")
    if pan is None or case is None:
        return None
    p, c = top_label(pan), top_label(case)
    if p is None or c is None:
        return None
    p, c = norm(p), norm(c)
    if p == c:
        return None
    for item in chain.by_tool("guideline_rag"):
        q = " ".join(item.params["query"].casefold().split())
        if p in q and c in q:
            return None
    return p, c


def detect_conflicts(chain: EvidenceChain, ontology=None) -> bool:
    return conflict_pair(chain, ontology) is not None


def make_feedback(flags, chain: EvidenceChain, scope: TaskScope, *, defaults, ontology=None,
                  enabled=None) -> list[Feedback]:
    f_conf, f_cov, f_con = flags
    if not (f_conf or f_cov or f_con):
        raise ValidationError("make_feedback called with no gate raised")
    norm = _normalizer(ontology)
    out = []
    if f_conf:
        suggestion = ()
        for tool in _uninvoked(chain, scope):
            call = defaults.call(tool, chain, normalize=norm)
            if call is not None:
                suggestion = (call,)
                break
        target = suggestion[0].tool_id if suggestion else "none available"
        out.append(Feedback(
            Gate.CONFIDENCE,
            f"Low-confidence evidence below threshold; gather independent evidence with {target}.",
            suggestion,
        ))
    if f_cov:
        missing = missing_required(scope, chain, enabled)
        calls = tuple(c for c in (defaults.call(t, chain, normalize=norm) for t in missing) if c is not None)
        out.append(Feedback(
            Gate.COVERAGE,
            f"Task-critical tools have not produced evidence: {', '.join(missing)}.",
            calls,
        ))
    if f_con:
        pair = conflict_pair(chain, ontology)
        if pair is None:
            raise ValidationError("conflict flag raised but no conflicting pair found")
        p, c = pair
        calls = []
        if "panderm" in scope.actionable_tools:
            calls.append(ToolCall("panderm", {"candidates": sorted([p, c])}))
        if "guideline_rag" in scope.actionable_tools:
            calls.append(ToolCall("guideline_rag", {"query": f"{c} vs {p} differential"}))
        out.append(Feedback(
            Gate.CONFLICT,
            f"Classifier predicts {p} but retrieved cases indicate {c}; re-examine the image "
            f"and check the differential against guidelines.",
            tuple(calls),
            reinject_image=True,
        ))
    return out


class Critic:
    """Evaluates all three gates (no short-circuit) and builds directional feedback."""

    def __init__(self, thresholds: CriticThresholds | None = None, ontology=None, defaults=None):
        self.thresholds = thresholds or CriticThresholds()
        self.ontology = ontology
        self.defaults = defaults

    def evaluate(self, chain: EvidenceChain, scope: TaskScope) -> CriticVerdict:
        f_conf = check_confidence(chain, scope, self.thresholds)
        f_cov = check_coverage(scope, chain)
        f_con = detect_conflicts(chain, self.ontology)
        feedback = ()
        if f_conf or f_cov or f_con:
            feedback = make_feedback((f_conf, f_cov, f_con), chain, scope,
                                     defaults=self.defaults, ontology=self.ontology)
        return CriticVerdict(f_conf, f_cov, f_con, tuple(feedback))
