"""Evaluation metrics: accuracy, macro F1 over label sets, sentence-level ROUGE-L F1."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .exceptions import ValidationError

_TOKEN = re.compile(r"[^\W_]+")


def rouge_tokens(text: str) -> list[str]:
    return _TOKEN.findall(text.casefold())


@dataclass(frozen=True)
class MetricReport:
    task_type: str
    metric: str
    value: float
    n: int
    per_class: dict | None = None
    failures: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValidationError(f"metric value {self.value} outside [0, 1]")
        if (self.per_class is not None) != (self.metric == "f1_macro"):
            raise ValidationError("per-class breakdown is reported for F1-macro only")

    def to_dict(self) -> dict:
        out = {"task_type": self.task_type, "metric": self.metric, "value": self.value,
               "n": self.n, "failures": self.failures}
        if self.per_class is not None:
            out["per_class"] = self.per_class
        out.update(self.extra)
        return out


def metric_accuracy(predictions, gold, normalize=None) -> float:
    if len(predictions) != len(gold):
        raise ValidationError(f"length mismatch: {len(predictions)} predictions, {len(gold)} gold")
    if not gold:
        raise ValidationError("accuracy over an empty list")
    norm = normalize or (lambda s: " ".join(s.casefold().split()))
    hits = sum(1 for p, g in zip(predictions, gold) if p is not None and norm(p) == norm(g))
    return hits / len(gold)


def f1_per_label(predictions, gold, vocabulary, exclude_absent: bool = True) -> dict[str, float]:
    if len(predictions) != len(gold):
        raise ValidationError(f"length mismatch: {len(predictions)} predictions, {len(gold)} gold")
    vocab = list(vocabulary)
    known = set(vocab)
    for group in (predictions, gold):
        for labels in group:
            for lab in labels:
                if lab not in known:
                    raise ValidationError(f"label {lab!r} is not in the vocabulary")
    out = {}
    for lab in vocab:
        tp = fp = fn = 0
        for p, g in zip(predictions, gold):
            in_p, in_g = lab in p, lab in g
            tp += in_p and in_g
            fp += in_p and not in_g
            fn += in_g and not in_p
        if tp + fp + fn == 0:
            if exclude_absent:
                continue
            out[lab] = 0.0
            continue
        out[lab] = 2 * tp / (2 * tp + fp + fn)
    return out


def metric_f1_macro(predictions, gold, vocabulary, exclude_absent: bool = True) -> float:
    """Mean per-label F1. Labels absent from both sides everywhere are skipped by default."""
    per = f1_per_label(predictions, gold, vocabulary, exclude_absent)
    return sum(per.values()) / len(per) if per else 0.0


def lcs_length(a, b) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_tokens(cand: list[str], ref: list[str]) -> float:
    if not cand or not ref:
        raise ValidationError("ROUGE-L needs non-empty token sequences")
    # 2PR/(P+R) with P = lcs/m, R = lcs/n reduces to one correctly rounded division
    return 2 * lcs_length(cand, ref) / (len(cand) + len(ref))


def metric_rouge_l(candidate: str, reference: str) -> float:
    return rouge_l_tokens(rouge_tokens(candidate), rouge_tokens(reference))
