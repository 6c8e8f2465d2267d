"""Manifest-driven evaluation and leave-one-out ablation."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

from .config import build_stack
from .critic import REQUIRED_TOOLS
from .evidence import TOOL_IDS, Query, TaskType
from .exceptions import ConfigurationError, DermflowError, ManifestError
from .metrics import MetricReport, f1_per_label, metric_accuracy, rouge_l_tokens, rouge_tokens

logger = logging.getLogger(__name__)

TASKS = {
    "diagnosis": TaskType.DIAGNOSIS,
    "concept": TaskType.CONCEPT_ANNOTATION,
    "caption": TaskType.CAPTIONING,
}
METRIC_NAMES = {"diagnosis": "accuracy", "concept": "f1_macro", "caption": "rouge_l"}
_DIAG_LINE = re.compile(r"^\s*diagnosis\s*:\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE)


@dataclass(frozen=True)
class EvalRecord:
    image_ref: str
    question: str
    gold: object


def _check_gold(task: str, gold, where: str):
    if task == "concept":
        if not isinstance(gold, list) or not all(isinstance(g, str) for g in gold):
            raise ManifestError(f"{where}: concept gold must be a list of strings")
    elif not isinstance(gold, str) or not gold.strip():
        raise ManifestError(f"{where}: {task} gold must be a non-empty string")


def load_manifest(path, task: str) -> list[EvalRecord]:
    """Parse a line-delimited manifest; image paths are relative to the manifest."""
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            rec = json.loads(line)
            image, question, gold = rec["image_ref"], rec["question"], rec["gold"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ManifestError(f"{where}: malformed record ({exc})") from None
        _check_gold(task, gold, where)
        image_path = Path(image)
        if not image_path.is_absolute():
            image_path = path.parent / image_path
        records.append(EvalRecord(str(image_path), question, gold))
    if not records:
        raise ManifestError(f"{path}: no records")
    return records


def extract_diagnosis(answer: str) -> str | None:
    found = _DIAG_LINE.findall(answer)
    if not found or found[-1].casefold() == "undetermined":
        return None
    return found[-1]


def _concepts(response) -> list[str]:
    item = response.evidence.latest("make")
    return list(item.result["present"]) if item is not None else []


def run_eval(manifest, task: str, config: dict, *, disable=(), trace_dir=None,
             strict: bool = False) -> MetricReport:
    if task not in TASKS:
        raise ConfigurationError(f"unknown task {task!r}; expected one of {sorted(TASKS)}")
    if strict:
        clash = set(disable) & REQUIRED_TOOLS[TASKS[task]]
        if clash:
            raise ConfigurationError(f"strict mode: {sorted(clash)} required for {task}")
    records = load_manifest(manifest, task)
    stack = build_stack(config, disable=disable)
    orchestrator = stack.orchestrator()
    exclude_failed = config.get("eval", {}).get("exclude_failed_records", False)
    if trace_dir is not None:
        trace_dir = Path(trace_dir)
        trace_dir.mkdir(parents=True, exist_ok=True)

    preds, golds, failures = [], [], 0
    for i, rec in enumerate(records):
        try:
            response = orchestrator.run(Query(rec.image_ref, rec.question))
        except DermflowError as exc:
            logger.warning("record %d (%s) failed: %s", i, rec.image_ref, exc)
            failures += 1
            if exclude_failed:
                continue
            response = None
        if response is not None and trace_dir is not None:
            name = f"{i:03d}_{Path(rec.image_ref).stem}.jsonl"
            (trace_dir / name).write_bytes(response.trace_bytes())
        if task == "diagnosis":
            preds.append(extract_diagnosis(response.answer) if response else None)
        elif task == "concept":
            preds.append(_concepts(response) if response else [])
        else:
            preds.append(response.answer if response else "")
        golds.append(rec.gold)

    if not golds:
        raise ManifestError("every record failed; nothing to score")
    if task == "diagnosis":
        value = metric_accuracy(preds, golds, stack.ontology.canonical)
        return MetricReport(TASKS[task].value, "accuracy", value, len(golds), failures=failures)
    if task == "concept":
        exclude = config.get("eval", {}).get("f1_exclude_absent_labels", True)
        per = f1_per_label([set(p) for p in preds], [set(g) for g in golds], stack.defaults.features, exclude)
        value = sum(per.values()) / len(per) if per else 0.0
        return MetricReport(TASKS[task].value, "f1_macro", value, len(golds), per_class=per, failures=failures)
    scores = []
    for cand, ref in zip(preds, golds):
        c = rouge_tokens(cand)
        scores.append(rouge_l_tokens(c, rouge_tokens(ref)) if c else 0.0)
    return MetricReport(TASKS[task].value, "rouge_l", sum(scores) / len(scores), len(golds), failures=failures)


@dataclass(frozen=True)
class AblationReport:
    tool: str
    full: MetricReport
    ablated: MetricReport

    @property
    def delta(self) -> float:
        return self.ablated.value - self.full.value

    def to_dict(self) -> dict:
        return {"tool": self.tool, "full": self.full.to_dict(), "ablated": self.ablated.to_dict(),
                "delta": self.delta}


def ablate(manifest, task: str, config: dict, tool_to_disable: str | None, *, strict: bool = False,
           trace_dir=None) -> AblationReport:
    """Run the manifest with all tools, then with ``tool_to_disable`` removed.

    ``None`` disables nothing (a control run; the delta is 0).
    """
    if tool_to_disable is not None and (
        tool_to_disable not in TOOL_IDS or tool_to_disable not in config["enabled_tools"]
    ):
        raise ConfigurationError(f"cannot disable {tool_to_disable!r}: not an enabled tool")
    disable = () if tool_to_disable is None else (tool_to_disable,)
    full_dir = ablated_dir = None
    if trace_dir is not None:
        full_dir, ablated_dir = Path(trace_dir) / "full", Path(trace_dir) / f"without_{tool_to_disable}"
    full = run_eval(manifest, task, config, trace_dir=full_dir)
    ablated = run_eval(manifest, task, config, disable=disable, trace_dir=ablated_dir, strict=strict)
    return AblationReport(tool_to_disable or "none", full, ablated)
