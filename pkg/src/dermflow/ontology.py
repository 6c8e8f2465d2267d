"""Skin-disease taxonomy tree with alias lookup and trigram fuzzy matching.

Taxonomy files are JSON in one of two layouts:

* nested: ``{"id", "name", "aliases": [...], "children": [...]}`` from the root down;
* flat: ``[{"id", "name", "parent": <id or null>, "aliases": [...]}, ...]``.

The flat layout can express cycles and multiple roots, which are rejected.
"""

from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import NotFoundError, OntologyStructureError, ValidationError
from .evidence import ONTOLOGY_MODES

DEFAULT_FUZZY_THRESHOLD = 0.4

_WS = re.compile(r"\s+")


def _norm(text: str) -> str:
    return _WS.sub(" ", text.casefold()).strip()


def trigrams(text: str) -> frozenset[str]:
    s = "  " + _norm(text) + " "
    return frozenset(s[i:i + 3] for i in range(len(s) - 2))


def trigram_similarity(a: str, b: str) -> float:
    ta, tb = trigrams(a), trigrams(b)
    union = ta | tb
    if not union:
        return 0.0
    return len(ta & tb) / len(union)


@dataclass(eq=False)
class OntologyNode:
    id: str
    name: str
    aliases: list[str] = field(default_factory=list)
    parent: "OntologyNode | None" = field(default=None, repr=False)
    children: list["OntologyNode"] = field(default_factory=list, repr=False)

    @property
    def depth(self) -> int:
        d, node = 0, self
        while node.parent is not None:
            d, node = d + 1, node.parent
        return d

    def path(self) -> list["OntologyNode"]:
        out, node = [], self
        while node is not None:
            out.append(node)
            node = node.parent
        return out[::-1]

    def is_leaf(self) -> bool:
        return not self.children


class OntologyIndex:
    def __init__(self, root: OntologyNode, nodes: list[OntologyNode]):
        self.root = root
        self.nodes = nodes
        self.by_name: dict[str, OntologyNode] = {}
        self.by_alias: dict[str, OntologyNode] = {}
        self._trigram_index: dict[str, set[int]] = defaultdict(set)
        self._surface: list[tuple[str, OntologyNode]] = []
        for node in nodes:
            self.by_name[_norm(node.name)] = node
            for alias in node.aliases:
                self.by_alias[_norm(alias)] = node
            for form in [node.name, *node.aliases]:
                idx = len(self._surface)
                self._surface.append((form, node))
                for tg in trigrams(form):
                    self._trigram_index[tg].add(idx)

    def __len__(self):
        return len(self.nodes)

    def leaves(self) -> list[OntologyNode]:
        return [n for n in self.nodes if n.is_leaf()]

    def lookup(self, name: str) -> OntologyNode | None:
        """Exact canonical-name or alias match (casefolded)."""
        key = _norm(name)
        return self.by_name.get(key) or self.by_alias.get(key)

    def canonical(self, label: str) -> str:
        """Casefolded canonical name for ``label``; unknown labels are just casefolded."""
        node = self.lookup(label)
        return _norm(node.name) if node is not None else _norm(label)

    def resolve_fuzzy(self, d: str, threshold: float = DEFAULT_FUZZY_THRESHOLD):
        """Ranked ``(node, score)`` pairs with trigram Jaccard score >= threshold.

        A node's score is the best over its canonical name and aliases.
        """
        query_tg = trigrams(d)
        candidates: set[int] = set()
        for tg in query_tg:
            candidates |= self._trigram_index.get(tg, set())
        best: dict[int, tuple[OntologyNode, float]] = {}
        for idx in candidates:
            form, node = self._surface[idx]
            score = trigram_similarity(d, form)
            prev = best.get(id(node))
            if prev is None or score > prev[1]:
                best[id(node)] = (node, score)
        ranked = sorted(best.values(), key=lambda p: (-p[1], p[0].name))
        if threshold > 0:
            ranked = [p for p in ranked if p[1] >= threshold]
        return ranked

    def resolve(self, d: str, threshold: float = DEFAULT_FUZZY_THRESHOLD):
        """Exact, then alias, then fuzzy resolution. Returns ``(node, score)``."""
        key = _norm(d)
        if key in self.by_name:
            return self.by_name[key], 1.0
        if key in self.by_alias:
            return self.by_alias[key], 1.0
        matches = self.resolve_fuzzy(d, threshold)
        if not matches:
            nearest = [n.name for n, _ in self.resolve_fuzzy(d, 0.0)[:3]]
            raise NotFoundError(f"no taxonomy node matches {d!r}", nearest)
        return matches[0]

    def query(self, mode: str, d: str, threshold: float = DEFAULT_FUZZY_THRESHOLD) -> dict:
        """Run one ontology-tool query; returns a JSON-ready payload."""
        if mode not in ONTOLOGY_MODES:
            raise ValidationError(f"unknown ontology mode {mode!r}")
        if mode == "search":
            hits = self.resolve_fuzzy(d, threshold)
            return {
                "mode": mode,
                "query": d,
                "results": [{"name": n.name, "score": s} for n, s in hits],
            }
        node, score = self.resolve(d, threshold)
        if mode == "hierarchy":
            results = [n.name for n in node.path()]
        elif mode == "children":
            results = [c.name for c in node.children]
        else:
            results = [] if node.parent is None else [
                c.name for c in node.parent.children if c is not node
            ]
        return {"mode": mode, "query": d, "name": node.name, "match_score": score, "results": results}


def query_ontology(mode: str, d: str, index: OntologyIndex, threshold: float = DEFAULT_FUZZY_THRESHOLD) -> list:
    payload = index.query(mode, d, threshold)
    if mode == "search":
        return [(r["name"], r["score"]) for r in payload["results"]]
    return payload["results"]


def _flatten_nested(doc: dict, parent_id, out: list) -> None:
    if not isinstance(doc, dict) or "name" not in doc:
        raise OntologyStructureError(f"malformed taxonomy node: {doc!r}")
    node_id = str(doc.get("id", doc["name"]))
    out.append({
        "id": node_id,
        "name": doc["name"],
        "parent": parent_id,
        "aliases": list(doc.get("aliases", [])),
    })
    for child in doc.get("children", []):
        _flatten_nested(child, node_id, out)


def build_ontology(records: list[dict]) -> OntologyIndex:
    """Validate flat ``{id, name, parent, aliases}`` records and link the tree."""
    nodes: dict[str, OntologyNode] = {}
    parents: dict[str, str | None] = {}
    names: dict[str, str] = {}
    for rec in records:
        node_id = str(rec["id"])
        if node_id in nodes:
            raise OntologyStructureError(f"duplicate node id {node_id!r}")
        name = rec["name"]
        if not isinstance(name, str) or not name.strip():
            raise OntologyStructureError(f"node {node_id!r} has no name")
        for form in [name, *rec.get("aliases", [])]:
            key = _norm(form)
            if key in names:
                raise OntologyStructureError(
                    f"duplicate name {form!r} (node {node_id!r} clashes with {names[key]!r})"
                )
            names[key] = node_id
        nodes[node_id] = OntologyNode(node_id, name, list(rec.get("aliases", [])))
        parent = rec.get("parent")
        parents[node_id] = None if parent is None else str(parent)

    for node_id, parent in parents.items():
        if parent is not None and parent not in nodes:
            raise OntologyStructureError(f"node {node_id!r} has unknown parent {parent!r}")

    for start in nodes:
        seen = {start}
        cur = parents[start]
        while cur is not None:
            if cur in seen:
                raise OntologyStructureError(f"cycle through node {cur!r}")
            seen.add(cur)
            cur = parents[cur]

    roots = [nid for nid, p in parents.items() if p is None]
    if len(roots) != 1:
        raise OntologyStructureError(f"expected a single root, found {roots}")

    for node_id, parent in parents.items():
        if parent is not None:
            nodes[node_id].parent = nodes[parent]
            nodes[parent].children.append(nodes[node_id])
    return OntologyIndex(nodes[roots[0]], list(nodes.values()))


def load_ontology(source) -> OntologyIndex:
    """Load a taxonomy from a path, JSON text, or an already-parsed document."""
    if isinstance(source, (str, Path)) and Path(source).is_file():
        doc = json.loads(Path(source).read_text(encoding="utf-8"))
    elif isinstance(source, str):
        doc = json.loads(source)
    else:
        doc = source
    if isinstance(doc, dict):
        records: list[dict] = []
        _flatten_nested(doc, None, records)
    elif isinstance(doc, list):
        records = doc
    else:
        raise OntologyStructureError("taxonomy must be an object or a list")
    return build_ontology(records)
