"""Exact brute-force nearest-neighbor search over an embedding set.

No approximation: every query scans all rows. Distances are cosine distances
computed as 1 - dot in float32; ties are broken by ascending keyword id,
which the row order guarantees (rows are stored sorted by id).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingSet, KeywordRef
from .errors import DimensionMismatchError, EmptySetError

DEFAULT_K = 100


@dataclass(frozen=True)
class Neighbor:
    id: int
    distance: float


@dataclass
class FlatIndex:
    """Immutable row-major matrix of unit vectors plus id bookkeeping."""

    market: str
    dim: int
    ids: np.ndarray
    refs: list[KeywordRef]
    matrix: np.ndarray

    def ref_by_id(self, keyword_id: int) -> KeywordRef:
        row = int(np.searchsorted(self.ids, keyword_id))
        return self.refs[row]

    def __len__(self) -> int:
        return len(self.refs)


def build_index(embedding_set: EmbeddingSet) -> FlatIndex:
    """Copy an embedding set into an index, rows sorted by ascending id."""
    if len(embedding_set) == 0:
        raise EmptySetError("cannot index an empty embedding set")
    order = sorted(range(len(embedding_set.refs)), key=lambda i: embedding_set.refs[i].id)
    refs = [embedding_set.refs[i] for i in order]
    ids = np.array([r.id for r in refs], dtype=np.int64)
    matrix = np.ascontiguousarray(embedding_set.matrix[order], dtype=np.float32)
    return FlatIndex(
        market=embedding_set.market, dim=embedding_set.dim, ids=ids, refs=refs, matrix=matrix
    )


def knn_search(
    index: FlatIndex,
    query: np.ndarray,
    k: int = DEFAULT_K,
    exclude_id: int | None = None,
) -> list[Neighbor]:
    """Exact k smallest cosine distances, ties broken by ascending id.

    The excluded id (normally the query keyword itself) never appears.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if query.shape != (index.dim,):
        raise DimensionMismatchError(
            f"query dim {query.shape} does not match index dim {index.dim}"
        )
    # Per-row float32 dot products; matvec keeps the reduction order fixed
    # regardless of BLAS thread count.
    sims = index.matrix @ query.astype(np.float32)
    distances = np.float32(1.0) - sims
    if exclude_id is not None:
        row = int(np.searchsorted(index.ids, exclude_id))
        if row < len(index.ids) and index.ids[row] == exclude_id:
            distances = distances.copy()
            distances[row] = np.inf
    # Stable sort + id-ordered rows = (distance, id) lexicographic order.
    order = np.argsort(distances, kind="stable")[: min(k, len(index.ids))]
    out = []
    for row in order:
        d = float(distances[row])
        if d == np.inf:
            continue
        out.append(Neighbor(id=int(index.ids[row]), distance=min(max(d, 0.0), 2.0)))
    return out


def batch_search(
    index: FlatIndex,
    queries: list[np.ndarray],
    k: int = DEFAULT_K,
    exclude_ids: list[int | None] | None = None,
    workers: int = 1,
) -> list[list[Neighbor]]:
    """knn_search per query; output order always matches input order."""
    for qi, q in enumerate(queries):
        if q.shape != (index.dim,):
            raise DimensionMismatchError(f"query {qi}: dim {q.shape} != {index.dim}")
    if exclude_ids is None:
        exclude_ids = [None] * len(queries)
    if not queries:
        return []
    if workers <= 1:
        return [knn_search(index, q, k, e) for q, e in zip(queries, exclude_ids)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda qe: knn_search(index, qe[0], k, qe[1]), zip(queries, exclude_ids)))
