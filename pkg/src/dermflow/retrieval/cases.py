"""Case store: diagnosed cases with precomputed image embeddings and exact cosine search."""

from __future__ import annotations

import hashlib
import json
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..evidence import EvidenceItem, ToolCall, ToolOutput
from ..exceptions import EvidenceError, IngestionError, QueryError
from .vectors import cosine_scores, read_f32, row_norms, top_k, write_f32

logger = logging.getLogger(__name__)

DEFAULT_CASE_DIM = 512
DEFAULT_CASE_K = 4
FORMAT = "dermflow-cases/1"


@dataclass(frozen=True)
class CaseEntry:
    id: str
    embedding: tuple[float, ...]
    disease_label: str
    category_path: tuple[str, ...]
    description: str = ""

    @classmethod
    def from_record(cls, rec: dict) -> "CaseEntry":
        return cls(
            id=str(rec["id"]),
            embedding=tuple(float(x) for x in rec.get("embedding", ())),
            disease_label=rec["disease_label"],
            category_path=tuple(rec.get("category_path", ())),
            description=rec.get("description", ""),
        )

    def to_record(self, with_embedding: bool = True) -> dict:
        rec = {
            "id": self.id,
            "disease_label": self.disease_label,
            "category_path": list(self.category_path),
            "description": self.description,
        }
        if with_embedding:
            rec["embedding"] = list(self.embedding)
        return rec


class CaseIndex(BaseEstimator):
    """Exact cosine nearest-neighbour store over case embeddings.

    Parameters
    ----------
    dimension : int
        Embedding width every entry must have.
    ontology : OntologyIndex or None
        When given, each entry's ``category_path`` must be a parent-to-child
        chain in the taxonomy ending at its disease label.
    """

    def __init__(self, dimension=DEFAULT_CASE_DIM, ontology=None):
        self.dimension = dimension
        self.ontology = ontology

    def fit(self, entries: Iterable, y=None, embeddings=None):
        """Index ``entries``.

        ``embeddings`` is an optional ``(n_entries, dimension)`` matrix for bulk
        ingestion; row ``i`` belongs to entry ``i`` and per-entry embeddings
        are then ignored.
        """
        if embeddings is not None:
            embeddings = np.asarray(embeddings, dtype=np.float64)
            if embeddings.ndim != 2 or embeddings.shape[1] != self.dimension:
                raise IngestionError(f"embedding matrix shape {embeddings.shape} does not match dimension {self.dimension}")
        by_id: dict[str, tuple[CaseEntry, int]] = {}
        duplicates = 0
        n = 0
        for n, entry in enumerate(entries, 1):
            if isinstance(entry, dict):
                entry = CaseEntry.from_record(entry)
            if embeddings is None and len(entry.embedding) != self.dimension:
                raise IngestionError(
                    f"case {entry.id!r}: embedding dimension {len(entry.embedding)} != {self.dimension}"
                )
            if not entry.category_path:
                raise IngestionError(f"case {entry.id!r}: empty category_path")
            if self.ontology is not None:
                self._check_path(entry)
            if entry.id in by_id:
                duplicates += 1
            by_id[entry.id] = (entry, n - 1)
        if embeddings is not None and embeddings.shape[0] != n:
            raise IngestionError(f"{embeddings.shape[0]} embedding rows for {n} entries")
        if duplicates:
            logger.warning("ingest: %d duplicate case id(s), last write wins", duplicates)
        kept = list(by_id.values())
        matrix = None if embeddings is None else embeddings[[row for _, row in kept]]
        self._set_entries([e for e, _ in kept], matrix)
        self.n_duplicates_ = duplicates
        return self

    def _set_entries(self, entries, matrix=None):
        self.entries_ = entries
        self.ids_ = [e.id for e in entries]
        if matrix is None:
            matrix = np.array([e.embedding for e in entries], dtype=np.float64).reshape(
                len(entries), self.dimension
            )
        self.embeddings_ = matrix
        self.norms_ = row_norms(matrix)
        order = np.argsort(np.array(self.ids_, dtype=object), kind="stable")
        self.id_rank_ = np.empty(len(entries), dtype=np.int64)
        self.id_rank_[order] = np.arange(len(entries))

    def _check_path(self, entry: CaseEntry) -> None:
        onto = self.ontology
        nodes = [onto.lookup(name) for name in entry.category_path]
        if any(n is None for n in nodes):
            raise IngestionError(f"case {entry.id!r}: category_path has unknown node")
        for parent, child in zip(nodes, nodes[1:]):
            if child.parent is not parent:
                raise IngestionError(f"case {entry.id!r}: {child.name!r} is not under {parent.name!r}")
        if onto.canonical(entry.disease_label) != onto.canonical(nodes[-1].name):
            raise IngestionError(f"case {entry.id!r}: category_path does not end at its label")

    def __len__(self):
        check_is_fitted(self, "entries_")
        return len(self.entries_)

    def search(self, query_embedding, k: int = DEFAULT_CASE_K) -> list[tuple[CaseEntry, float]]:
        check_is_fitted(self, "entries_")
        q = np.asarray(query_embedding, dtype=np.float64).ravel()
        if q.shape[0] != self.dimension:
            raise QueryError(f"query dimension {q.shape[0]} != store dimension {self.dimension}")
        if k < 1:
            raise QueryError("k must be >= 1")
        sims = cosine_scores(self.embeddings_, self.norms_, q)
        idx, top = top_k(sims, self.id_rank_, k)
        return [(self.entries_[i], float(v)) for i, v in zip(idx, top)]

    kneighbors = search

    def save(self, out_dir) -> Path:
        """Write ``manifest.json``, ``records.jsonl`` and the ``vectors.f32`` sidecar."""
        check_is_fitted(self, "entries_")
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        records = "".join(
            json.dumps(e.to_record(with_embedding=False), sort_keys=True) + "\n" for e in self.entries_
        )
        (out / "records.jsonl").write_text(records, encoding="utf-8")
        write_f32(out / "vectors.f32", self.embeddings_)
        manifest = {
            "format": FORMAT,
            "dimension": self.dimension,
            "count": len(self.entries_),
            "dtype": "<f4",
            "records_sha256": hashlib.sha256(records.encode()).hexdigest(),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        return out

    @classmethod
    def load(cls, path, ontology=None) -> "CaseIndex":
        """Load an ingested directory or a line-delimited corpus file."""
        path = Path(path)
        if path.is_dir():
            manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
            dim, count = manifest["dimension"], manifest["count"]
            lines = (path / "records.jsonl").read_text(encoding="utf-8").splitlines()
            matrix = read_f32(path / "vectors.f32", count, dim)
            entries = []
            for line, row in zip(lines, matrix):
                rec = json.loads(line)
                rec["embedding"] = row.tolist()
                entries.append(CaseEntry.from_record(rec))
            index = cls(dimension=dim, ontology=ontology)
            index._set_entries(entries, matrix)
            index.n_duplicates_ = 0
            return index
        records = read_jsonl(path)
        if not records:
            raise IngestionError(f"{path}: empty corpus")
        dim = len(records[0].get("embedding", ()))
        return cls(dimension=dim, ontology=ontology).fit(records)


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise IngestionError(f"{path}:{lineno}: {exc}") from None
    return out


def ingest_cases(records: Iterable, dimension: int = DEFAULT_CASE_DIM, ontology=None) -> CaseIndex:
    return CaseIndex(dimension=dimension, ontology=ontology).fit(records)


def search_cases(store: CaseIndex, query_embedding, k: int = DEFAULT_CASE_K) -> list[tuple[CaseEntry, float]]:
    return store.search(query_embedding, k)


def majority_label(labels, similarities) -> str:
    """Most frequent (casefolded) label; ties go to the higher mean similarity, then name."""
    groups: dict[str, list[float]] = defaultdict(list)
    for label, sim in zip(labels, similarities):
        groups[label.casefold().strip()].append(float(sim))
    if not groups:
        raise EvidenceError("no labels to vote over")
    return min(groups, key=lambda g: (-len(groups[g]), -sum(groups[g]) / len(groups[g]), g))


def case_output(results: list[tuple[CaseEntry, float]]) -> ToolOutput:
    if not results:
        raise EvidenceError("case retrieval returned no neighbours")
    labels = [e.disease_label for e, _ in results]
    sims = [s for _, s in results]
    payload = {
        "labels": labels,
        "similarities": sims,
        "descriptions": [e.description for e, _ in results],
        "category_paths": [list(e.category_path) for e, _ in results],
        "majority_label": majority_label(labels, sims),
    }
    confidence = min(1.0, max(0.0, max(sims)))
    return ToolOutput(payload, confidence, tuple(e.id for e, _ in results))


def case_evidence(results, *, k: int = DEFAULT_CASE_K, seq: int = 0, round: int = 0) -> EvidenceItem:
    return case_output(results).to_item(seq, round, ToolCall("case_rag", {"k": k}))
