"""Exact cosine top-k over a dense matrix, plus the little-endian f32 sidecar format.

Sidecar layout (``vectors.f32``): ``count * dimension`` little-endian IEEE-754
float32 values, row-major, no header. Row ``i`` starts at byte offset
``i * dimension * 4`` and belongs to the ``i``-th line of the companion
records file. Dimension and count live in ``manifest.json``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

TIE_EPS = 1e-9


def row_norms(matrix: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", matrix, matrix))


def cosine_scores(matrix: np.ndarray, norms: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Cosine similarity of ``query`` against every row; zero-norm pairs score 0."""
    qn = float(np.sqrt(query @ query))
    if matrix.shape[0] == 0:
        return np.zeros(0)
    dots = matrix @ query
    denom = norms * qn
    sims = np.zeros_like(dots)
    nz = denom > 0
    sims[nz] = dots[nz] / denom[nz]
    return np.clip(sims, -1.0, 1.0)


def top_k(scores: np.ndarray, id_rank: np.ndarray, k: int, tie_eps: float = TIE_EPS):
    """The ``k`` best scores, descending, ties by ascending ``id_rank``.

    Scores within ``tie_eps`` of their neighbour form one tie group, so that
    rounding noise (which shifts with the query's scale) cannot reorder
    entries that are mathematically tied. Members of a group all report the
    group's top score. Returns ``(indices, scores)``.
    """
    n = scores.shape[0]
    k = min(k, n)
    if k == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    if k < n:
        lo = np.partition(scores, n - k)[n - k]
        while True:  # widen until no score chains into the boundary group
            cand = np.flatnonzero(scores >= lo - tie_eps)
            new_lo = scores[cand].min()
            if new_lo == lo:
                break
            lo = new_lo
    else:
        cand = np.arange(n)
    by_score = cand[np.argsort(-scores[cand], kind="stable")]
    s = scores[by_score]
    group = np.concatenate(([0], np.cumsum(s[:-1] - s[1:] > tie_eps)))
    pick = np.lexsort((id_rank[by_score], group))[:k]
    # first position of each group in the descending list holds its top score
    return by_score[pick], s[np.searchsorted(group, group[pick])]


def write_f32(path: Path, matrix: np.ndarray) -> None:
    np.ascontiguousarray(matrix, dtype="<f4").tofile(path)


def read_f32(path: Path, count: int, dimension: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    if data.size != count * dimension:
        raise ValueError(f"{path}: expected {count}x{dimension} floats, found {data.size}")
    return data.reshape(count, dimension).astype(np.float64)
