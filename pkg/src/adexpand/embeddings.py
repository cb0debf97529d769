"""Keyword embeddings: normalization, cosine arithmetic, a deterministic
hashed-n-gram fallback embedder, and TSV ingestion.

Vectors are float32 numpy arrays with unit L2 norm. The fallback embedder
stands in for a pre-trained encoder: it only needs to place near-duplicate
strings close together, deterministically, with no model file.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    DuplicateKeywordError,
    EmptySetError,
    NonFiniteError,
    ParseError,
    ZeroVectorError,
)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

NGRAM_SIZES = (3, 4, 5)
DEFAULT_DIM = 256


@dataclass(frozen=True, order=True)
class KeywordRef:
    """Identity of one keyword within a market."""

    market: str
    text: str
    id: int


def fnv1a_64(data: bytes) -> int:
    """FNV-1a 64-bit hash."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def normalize(values) -> np.ndarray:
    """Scale a raw vector to unit L2 norm (float32).

    Raises ZeroVectorError when the norm is at or below 1e-12 and
    NonFiniteError when any entry is NaN or infinite.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise DimensionMismatchError("expected a 1-D vector with at least one entry")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError("vector contains NaN or infinity")
    norm = float(np.linalg.norm(v))
    if norm <= 1e-12:
        raise ZeroVectorError("cannot normalize a zero vector")
    return (v / norm).astype(np.float32)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1]."""
    if u.shape != v.shape:
        raise DimensionMismatchError(f"dimensions differ: {u.shape} vs {v.shape}")
    return float(np.clip(np.dot(u, v), -1.0, 1.0))


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cosine_similarity; in [0, 2] for unit vectors."""
    return 1.0 - cosine_similarity(u, v)


def fallback_embed(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Deterministic embedding from hashed character n-grams.

    The lowercased, trimmed text is padded with '#' boundaries and decomposed
    into character n-grams of sizes 3, 4 and 5. Each n-gram is hashed with
    FNV-1a 64-bit; the hash picks a bucket (hash mod dim) and a sign (+1 when
    bit 63 is clear, -1 otherwise). Bucket counts are accumulated in that
    fixed order and the result is normalized, so identical (text, dim) inputs
    produce bit-identical vectors on every platform.
    """
    if dim < 16:
        raise ValueError("dim must be at least 16")
    trimmed = text.strip().lower()
    if not trimmed:
        raise ZeroVectorError("text produces no n-grams")
    padded = "#" + trimmed + "#"
    buckets = np.zeros(dim, dtype=np.int64)
    for n in NGRAM_SIZES:
        for start in range(len(padded) - n + 1):
            h = fnv1a_64(padded[start : start + n].encode("utf-8"))
            sign = 1 if (h >> 63) == 0 else -1
            buckets[h % dim] += sign
    if not np.any(buckets):
        raise ZeroVectorError("n-gram signs cancelled to a zero vector")
    return normalize(buckets)


@dataclass
class EmbeddingSet:
    """All keyword vectors for one market, row-aligned with refs by id."""

    market: str
    dim: int
    refs: list[KeywordRef]
    matrix: np.ndarray
    _by_text: dict[str, int] = field(repr=False, default_factory=dict)
    _by_id: dict[int, int] = field(repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        self._by_text = {r.text: i for i, r in enumerate(self.refs)}
        self._by_id = {r.id: i for i, r in enumerate(self.refs)}

    @classmethod
    def from_pairs(cls, market: str, pairs: list[tuple[str, np.ndarray]]) -> "EmbeddingSet":
        """Build a set from (keyword text, raw vector) pairs.

        Ids are assigned sequentially in input order; vectors are normalized.
        """
        if not pairs:
            raise EmptySetError(f"no keywords for market {market!r}")
        dim = len(pairs[0][1])
        refs: list[KeywordRef] = []
        rows = []
        seen: set[str] = set()
        for i, (text, vec) in enumerate(pairs):
            text = text.strip()
            if not text:
                raise ParseError(f"empty keyword at position {i}")
            if text in seen:
                raise DuplicateKeywordError(f"duplicate keyword {text!r} in market {market!r}")
            seen.add(text)
            if len(vec) != dim:
                raise DimensionMismatchError(
                    f"keyword {text!r} has dim {len(vec)}, expected {dim}"
                )
            refs.append(KeywordRef(market=market, text=text, id=i))
            rows.append(normalize(vec))
        return cls(market=market, dim=dim, refs=refs, matrix=np.vstack(rows))

    def __len__(self) -> int:
        return len(self.refs)

    def vector(self, ref: KeywordRef) -> np.ndarray:
        return self.matrix[self._by_id[ref.id]]

    def vector_by_text(self, text: str) -> np.ndarray | None:
        i = self._by_text.get(text)
        return None if i is None else self.matrix[i]

    def ref_by_text(self, text: str) -> KeywordRef | None:
        i = self._by_text.get(text)
        return None if i is None else self.refs[i]

    def ref_by_id(self, keyword_id: int) -> KeywordRef:
        return self.refs[self._by_id[keyword_id]]


def load_embeddings(path: str, market: str) -> EmbeddingSet:
    """Load one market's vectors from a TSV file.

    Format: ``market<TAB>keyword<TAB>v1 v2 ... vD`` per line, '#' comment
    lines ignored, dimension inferred from the first record. All rows are
    validated; only the requested market's rows enter the set.
    """
    pairs: list[tuple[str, np.ndarray]] = []
    dim: int | None = None
    seen: set[tuple[str, str]] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields")
            row_market, keyword, values = fields
            keyword = keyword.strip()
            if not keyword:
                raise ParseError(f"{path}:{lineno}: empty keyword")
            key = (row_market, keyword)
            if key in seen:
                raise DuplicateKeywordError(f"{path}:{lineno}: duplicate keyword {keyword!r}")
            seen.add(key)
            try:
                vec = np.array([float(x) for x in values.split()], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad float: {exc}") from exc
            if not np.all(np.isfinite(vec)):
                raise ParseError(f"{path}:{lineno}: non-finite vector entry")
            if float(np.linalg.norm(vec)) <= 1e-12:
                raise ParseError(f"{path}:{lineno}: zero vector")
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise DimensionMismatchError(
                    f"{path}:{lineno}: dim {vec.size}, expected {dim}"
                )
            if row_market == market:
                pairs.append((keyword, vec))
    if not pairs:
        raise EmptySetError(f"{path}: no rows for market {market!r}")
    return EmbeddingSet.from_pairs(market, pairs)


def save_embeddings(embedding_set: EmbeddingSet, path: str, append: bool = False) -> None:
    """Write a set in the TSV format with 9-significant-digit floats."""
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8") as fh:
        for ref in embedding_set.refs:
            row = embedding_set.vector(ref)
            values = " ".join(f"{float(x):.9g}" for x in row)
            fh.write(f"{embedding_set.market}\t{ref.text}\t{values}\n")


def markets_in_file(path: str) -> list[str]:
    """Distinct markets appearing in a TSV file, in first-seen order."""
    seen: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            market = line.split("\t", 1)[0]
            if market not in seen:
                seen.append(market)
    return seen
