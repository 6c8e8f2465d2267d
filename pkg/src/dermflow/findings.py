"""Read the headline finding out of evidence items, per tool."""

from __future__ import annotations

from .evidence import EvidenceChain, EvidenceItem


def top_label(item: EvidenceItem) -> str | None:
    """Diagnostic label an item points at (panderm top-1 or case majority)."""
    if item.failed:
        return None
    if item.tool_id == "panderm":
        preds = item.result.get("predictions") or []
        return preds[0]["label"] if preds else None
    if item.tool_id == "case_rag":
        return item.result.get("majority_label")
    return None


def describe(item: EvidenceItem) -> str:
    if item.failed:
        return "error: " + str(item.result["error"].get("message", ""))
    r = item.result
    tid = item.tool_id
    if tid in ("panderm", "case_rag"):
        text = top_label(item) or "none"
    elif tid == "make":
        text = "; ".join(r.get("present", [])) or "no concepts present"
    elif tid in ("dermo_gpt", "qwen_vl"):
        text = " ".join(str(r.get("text", "")).split())
    elif tid == "guideline_rag":
        if r.get("chunk_ids"):
            names = r["disease_names"][0]
            text = f"{', '.join(names)} / {r['sections'][0]}" if names else r["sections"][0]
        else:
            text = "no guideline found"
    elif tid == "ontology":
        res = r.get("results", [])
        if r.get("mode") == "search":
            text = ", ".join(x["name"] for x in res) or "no match"
        else:
            text = " > ".join(res) if r.get("mode") == "hierarchy" else ", ".join(res) or "none"
    else:
        text = str(r)
    return text


def best_diagnosis(chain: EvidenceChain, normalize=None) -> tuple[str, float] | None:
    """Highest-confidence label among the latest panderm and case_rag findings.

    Equal confidences go to the later item, so a refined classifier call
    supersedes an earlier one.
    """
    options = []
    for tool in ("panderm", "case_rag"):
        item = chain.latest(tool)
        if item is None:
            continue
        label = top_label(item)
        if label is None:
            continue
        conf = item.confidence if item.confidence is not None else 0.0
        options.append((conf, item.seq, label))
    if not options:
        return None
    conf, _, label = max(options)
    label = normalize(label) if normalize else label.casefold()
    return label, conf
