"""Evidence-grounded orchestration of dermatology perception and retrieval tools."""

from .critic import Critic, CriticThresholds, CriticVerdict
from .evidence import (
    EvidenceChain,
    EvidenceItem,
    Feedback,
    Plan,
    Query,
    Response,
    TaskScope,
    TaskType,
    ToolCall,
    append_evidence,
    parse_trace,
    serialize_trace,
)
from .orchestrator import Orchestrator, OrchestratorConfig, analyze_task, execute_round, run
from .planner import RemotePlanner, RuleBasedPlanner, parse_plan_document

__version__ = "0.1.0"

__all__ = [
    "Critic",
    "CriticThresholds",
    "CriticVerdict",
    "EvidenceChain",
    "EvidenceItem",
    "Feedback",
    "Orchestrator",
    "OrchestratorConfig",
    "Plan",
    "Query",
    "RemotePlanner",
    "Response",
    "RuleBasedPlanner",
    "TaskScope",
    "TaskType",
    "ToolCall",
    "analyze_task",
    "append_evidence",
    "execute_round",
    "parse_plan_document",
    "parse_trace",
    "run",
    "serialize_trace",
]
