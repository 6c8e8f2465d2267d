from .cases import CaseEntry, CaseIndex, case_evidence, ingest_cases, majority_label, search_cases
from .guidelines import (
    BM25Index,
    GuidelineChunk,
    GuidelineRetriever,
    HashingEmbedder,
    JaccardReranker,
    RankedList,
    filter_query,
    rrf_fuse,
)

__all__ = [
    "BM25Index",
    "CaseEntry",
    "CaseIndex",
    "GuidelineChunk",
    "GuidelineRetriever",
    "HashingEmbedder",
    "JaccardReranker",
    "RankedList",
    "case_evidence",
    "filter_query",
    "ingest_cases",
    "majority_label",
    "rrf_fuse",
    "search_cases",
]
