"""Hybrid guideline retrieval: stop-word filter, dense + BM25 search, RRF fusion, re-ranking.

Persisted index layout (one directory):

* ``manifest.json``: format tag, dimension, count, BM25 constants, corpus hash;
* ``chunks.jsonl``: chunk metadata in index order (no embeddings);
* ``vectors.f32``: chunk embeddings, see :mod:`dermflow.retrieval.vectors`;
* ``postings.json``: ``{"doc_len": [...], "postings": {term: [[doc, tf], ...]}}``.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..evidence import EvidenceItem, ToolCall, ToolOutput
from ..exceptions import DermflowError, IngestionError, QueryError
from .cases import read_jsonl
from .vectors import cosine_scores, read_f32, row_norms, top_k, write_f32

DEFAULT_GUIDE_DIM = 4096
DEFAULT_K_RRF = 60
FORMAT = "dermflow-guidelines/1"

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.casefold())


def load_stopwords(path=None) -> frozenset[str]:
    if path is None:
        text = resources.files("dermflow.data").joinpath("stopwords.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    words = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            words.add(line.casefold())
    return frozenset(words)


def filter_query(query: str, stops) -> str:
    tokens = tokenize(query)
    kept = [t for t in tokens if t not in stops]
    if not kept:
        return query.casefold()
    return " ".join(kept)


@dataclass(frozen=True)
class GuidelineChunk:
    id: str
    text: str
    disease_names: tuple[str, ...]
    section: str
    source_url: str
    embedding: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise IngestionError(f"chunk {self.id!r}: empty text")
        if not self.source_url.strip():
            raise IngestionError(f"chunk {self.id!r}: empty source_url")

    @classmethod
    def from_record(cls, rec: dict) -> "GuidelineChunk":
        emb = rec.get("embedding")
        return cls(
            id=str(rec["id"]),
            text=rec["text"],
            disease_names=tuple(rec.get("disease_names", ())),
            section=rec.get("section", ""),
            source_url=rec.get("source_url", ""),
            embedding=None if emb is None else tuple(float(x) for x in emb),
        )

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "disease_names": list(self.disease_names),
            "section": self.section,
            "source_url": self.source_url,
        }

    def indexed_text(self) -> str:
        return " ".join([self.text, *self.disease_names, self.section])


@dataclass(frozen=True)
class RankedList:
    items: tuple[tuple[str, float], ...]
    origin: str

    def __post_init__(self):
        object.__setattr__(self, "items", tuple((str(i), float(s)) for i, s in self.items))

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.items]

    def __len__(self):
        return len(self.items)


class HashingEmbedder:
    """Feature-hash bag of words into ``dimension`` buckets, L2-normalized."""

    def __init__(self, dimension: int = DEFAULT_GUIDE_DIM):
        self.dimension = dimension

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dimension

    def embed(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension))
        for row, text in enumerate(texts):
            for tok in tokenize(text):
                out[row, self._bucket(tok)] += 1.0
            norm = np.linalg.norm(out[row])
            if norm > 0:
                out[row] /= norm
        return out


class JaccardReranker:
    """Offline stand-in for a cross-encoder: token-set Jaccard overlap."""

    def score(self, query: str, documents: list[str]) -> list[float]:
        q = set(tokenize(query))
        scores = []
        for doc in documents:
            d = set(tokenize(doc))
            union = q | d
            scores.append(len(q & d) / len(union) if union else 0.0)
        return scores


class BM25Index(BaseEstimator):
    """Okapi BM25 over token lists. IDF is the non-negative ``ln(1 + (N-n+0.5)/(n+0.5))`` form."""

    def __init__(self, k1=1.2, b=0.75):
        self.k1 = k1
        self.b = b

    def fit(self, documents, ids=None):
        docs = [tokenize(d) if isinstance(d, str) else list(d) for d in documents]
        self.ids_ = [str(i) for i in (ids if ids is not None else range(len(docs)))]
        postings: dict[str, list[tuple[int, int]]] = defaultdict(list)
        for doc_idx, toks in enumerate(docs):
            for term, tf in sorted(Counter(toks).items()):
                postings[term].append((doc_idx, tf))
        self._finish(dict(postings), [len(t) for t in docs])
        return self

    def _finish(self, postings, doc_len):
        self.postings_ = postings
        self.doc_len_ = np.asarray(doc_len, dtype=np.float64)
        n = len(doc_len)
        self.avgdl_ = float(self.doc_len_.mean()) if n else 0.0
        self.idf_ = {
            term: math.log(1.0 + (n - len(p) + 0.5) / (len(p) + 0.5)) for term, p in postings.items()
        }

    def scores(self, query: str) -> dict[int, float]:
        check_is_fitted(self, "postings_")
        out: dict[int, float] = defaultdict(float)
        avgdl = self.avgdl_ or 1.0
        for term in dict.fromkeys(tokenize(query)):
            for doc_idx, tf in self.postings_.get(term, ()):
                norm = self.k1 * (1.0 - self.b + self.b * self.doc_len_[doc_idx] / avgdl)
                out[doc_idx] += self.idf_[term] * tf * (self.k1 + 1.0) / (tf + norm)
        return dict(out)

    def search(self, query: str, k: int = 20) -> RankedList:
        scored = self.scores(query)
        ranked = sorted(scored.items(), key=lambda p: (-p[1], self.ids_[p[0]]))[:k]
        return RankedList(tuple((self.ids_[i], s) for i, s in ranked), "keyword")


def rrf_fuse(lists, k_rrf: int = DEFAULT_K_RRF, top_n: int | None = None) -> RankedList:
    """Reciprocal rank fusion: sum of ``1/(k_rrf + rank)`` over lists, ranks from 1."""
    if not lists:
        raise ValueError("rrf_fuse needs at least one list")
    exact: dict[str, Fraction] = defaultdict(Fraction)
    for ranked in lists:
        for rank, doc_id in enumerate(ranked.ids, start=1):
            exact[doc_id] += Fraction(1, k_rrf + rank)
    # rank by the exact rational sum so that equal sums of different terms
    # (1/99 + 1/66 == 1/88 + 1/72) still tie and fall back to the id
    order = sorted(exact.items(), key=lambda p: (-p[1], p[0]))
    if top_n is not None:
        order = order[:top_n]
    return RankedList(tuple((d, float(v)) for d, v in order), "fused")


def rerank(query: str, candidates, reranker, top_m: int, fallback_scores=None):
    """Score candidates with ``reranker``; returns ``(ranked pairs, degraded)``.

    If the provider raises, candidates keep their incoming order with
    ``fallback_scores`` (or zeros) and ``degraded`` is True.
    """
    if not candidates:
        raise ValueError("rerank needs at least one candidate")
    try:
        scores = reranker.score(query, [c.text for c in candidates])
        if len(scores) != len(candidates):
            raise DermflowError("reranker returned a score list of the wrong length")
    except Exception:
        fb = fallback_scores or [0.0] * len(candidates)
        return list(zip(candidates, map(float, fb)))[:top_m], True
    order = sorted(range(len(candidates)), key=lambda i: -scores[i])
    return [(candidates[i], float(scores[i])) for i in order[:top_m]], False


class GuidelineRetriever(BaseEstimator):
    """Four-stage hybrid retriever over guideline chunks.

    ``fit`` embeds chunks that arrive without an embedding and builds the BM25
    postings over text, disease names and section heading.
    """

    def __init__(
        self,
        embedder=None,
        reranker=None,
        stopwords=None,
        dimension=DEFAULT_GUIDE_DIM,
        dense_k=20,
        keyword_k=20,
        top_n=10,
        top_m=5,
        k_rrf=DEFAULT_K_RRF,
        k1=1.2,
        b=0.75,
    ):
        self.embedder = embedder
        self.reranker = reranker
        self.stopwords = stopwords
        self.dimension = dimension
        self.dense_k = dense_k
        self.keyword_k = keyword_k
        self.top_n = top_n
        self.top_m = top_m
        self.k_rrf = k_rrf
        self.k1 = k1
        self.b = b

    def _embedder(self):
        return self.embedder if self.embedder is not None else HashingEmbedder(self.dimension)

    def _stops(self):
        return self.stopwords if self.stopwords is not None else load_stopwords()

    def fit(self, chunks, y=None, embeddings=None):
        """Index ``chunks``; ``embeddings`` optionally supplies all vectors as one matrix."""
        chunks = [GuidelineChunk.from_record(c) if isinstance(c, dict) else c for c in chunks]
        if not chunks:
            raise IngestionError("no guideline chunks to index")
        seen = set()
        for c in chunks:
            if c.id in seen:
                raise IngestionError(f"duplicate chunk id {c.id!r}")
            seen.add(c.id)
        if embeddings is not None:
            matrix = np.asarray(embeddings, dtype=np.float64)
            if matrix.shape != (len(chunks), self.dimension):
                raise IngestionError(f"embedding matrix shape {matrix.shape} != {(len(chunks), self.dimension)}")
        else:
            matrix = self._chunk_matrix(chunks)
        bm25 = BM25Index(k1=self.k1, b=self.b).fit([c.indexed_text() for c in chunks], [c.id for c in chunks])
        self._set_state(chunks, matrix, bm25)
        return self

    def _chunk_matrix(self, chunks) -> np.ndarray:
        missing = [i for i, c in enumerate(chunks) if c.embedding is None]
        matrix = np.zeros((len(chunks), self.dimension))
        if missing:
            vecs = np.asarray(self._embedder().embed([chunks[i].text for i in missing]), dtype=np.float64)
            matrix[missing] = vecs
        for i, c in enumerate(chunks):
            if c.embedding is not None:
                if len(c.embedding) != self.dimension:
                    raise IngestionError(f"chunk {c.id!r}: embedding dimension {len(c.embedding)} != {self.dimension}")
                matrix[i] = c.embedding
        return matrix

    def _set_state(self, chunks, matrix, bm25):
        self.chunks_ = chunks
        self.by_id_ = {c.id: c for c in chunks}
        self.embeddings_ = matrix
        self.norms_ = row_norms(matrix)
        ids = [c.id for c in chunks]
        order = np.argsort(np.array(ids, dtype=object), kind="stable")
        self.id_rank_ = np.empty(len(ids), dtype=np.int64)
        self.id_rank_[order] = np.arange(len(ids))
        self.bm25_ = bm25

    def dense_search(self, query: str, k: int | None = None) -> RankedList:
        check_is_fitted(self, "chunks_")
        k = self.dense_k if k is None else k
        if k < 1:
            raise QueryError("k must be >= 1")
        q = np.asarray(self._embedder().embed([query]), dtype=np.float64)[0]
        return self.dense_search_vector(q, k)

    def dense_search_vector(self, q, k: int) -> RankedList:
        q = np.asarray(q, dtype=np.float64).ravel()
        if q.shape[0] != self.dimension:
            raise QueryError(f"query dimension {q.shape[0]} != index dimension {self.dimension}")
        sims = cosine_scores(self.embeddings_, self.norms_, q)
        idx, top = top_k(sims, self.id_rank_, k)
        return RankedList(tuple((self.chunks_[i].id, float(v)) for i, v in zip(idx, top)), "dense")

    def keyword_search(self, query: str, k: int | None = None) -> RankedList:
        check_is_fitted(self, "chunks_")
        return self.bm25_.search(query, self.keyword_k if k is None else k)

    def retrieve(self, query: str) -> ToolOutput:
        check_is_fitted(self, "chunks_")
        filtered = filter_query(query, self._stops())
        with ThreadPoolExecutor(max_workers=1) as pool:
            keyword_future = pool.submit(self.keyword_search, filtered)
            dense = self.dense_search(filtered)
            keyword = keyword_future.result()
        fused = rrf_fuse([dense, keyword], self.k_rrf, self.top_n)
        candidates = [self.by_id_[i] for i in fused.ids]
        reranker = self.reranker if self.reranker is not None else JaccardReranker()
        ranked, degraded = rerank(filtered, candidates, reranker, self.top_m,
                                  [s for _, s in fused.items])
        sources = list(dict.fromkeys(c.source_url for c, _ in ranked))
        payload = {
            "query": query,
            "filtered_query": filtered,
            "chunk_ids": [c.id for c, _ in ranked],
            "disease_names": [list(c.disease_names) for c, _ in ranked],
            "sections": [c.section for c, _ in ranked],
            "passages": [c.text for c, _ in ranked],
            "relevance": [s for _, s in ranked],
            "degraded": degraded,
        }
        top_sim = dense.items[0][1] if dense.items else 0.0
        return ToolOutput(payload, min(1.0, max(0.0, top_sim)), tuple(sources))

    def save(self, out_dir) -> Path:
        check_is_fitted(self, "chunks_")
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        records = "".join(json.dumps(c.to_record(), sort_keys=True) + "\n" for c in self.chunks_)
        (out / "chunks.jsonl").write_text(records, encoding="utf-8")
        write_f32(out / "vectors.f32", self.embeddings_)
        postings = {
            "doc_len": [int(x) for x in self.bm25_.doc_len_],
            "postings": {t: [list(p) for p in ps] for t, ps in sorted(self.bm25_.postings_.items())},
        }
        (out / "postings.json").write_text(json.dumps(postings, sort_keys=True), encoding="utf-8")
        manifest = {
            "format": FORMAT,
            "dimension": self.dimension,
            "count": len(self.chunks_),
            "k1": self.k1,
            "b": self.b,
            "corpus_sha256": hashlib.sha256(records.encode()).hexdigest(),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        return out

    def load(self, path) -> "GuidelineRetriever":
        """Fit from an ingested directory or a line-delimited corpus file."""
        path = Path(path)
        if not path.is_dir():
            return self.fit(read_jsonl(path))
        manifest = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
        if manifest["dimension"] != self.dimension:
            raise IngestionError(f"{path}: index dimension {manifest['dimension']} != {self.dimension}")
        chunks = [GuidelineChunk.from_record(json.loads(l))
                  for l in (path / "chunks.jsonl").read_text(encoding="utf-8").splitlines() if l.strip()]
        matrix = read_f32(path / "vectors.f32", manifest["count"], manifest["dimension"])
        stored = json.loads((path / "postings.json").read_text(encoding="utf-8"))
        bm25 = BM25Index(k1=manifest["k1"], b=manifest["b"])
        bm25.ids_ = [c.id for c in chunks]
        bm25._finish({t: [tuple(p) for p in ps] for t, ps in stored["postings"].items()}, stored["doc_len"])
        self.k1, self.b = manifest["k1"], manifest["b"]
        self._set_state(chunks, matrix, bm25)
        return self


def retrieve_guidelines(query: str, retriever: GuidelineRetriever, *, seq: int = 0, round: int = 0) -> EvidenceItem:
    return retriever.retrieve(query).to_item(seq, round, ToolCall("guideline_rag", {"query": query}))
