"""Threshold-gated semantic variant generation with gender and numeric
consistency filters.

A keyword is assigned to its nearest cluster, its cluster's distance cutoff
is looked up, nearest neighbors within the cutoff become candidate variants,
and candidates that flip gender ("men's shoes" -> "women's sandals") or
contradict a shared numeric attribute ("iphone 13" -> "iphone 12") are
rejected. Rejected candidates stay in the record with their rejection reason
so before/after-filter behavior can be audited.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .clustering import Clustering, assign_cluster
from .embeddings import EmbeddingSet, KeywordRef
from .flat_index import DEFAULT_K, FlatIndex, knn_search
from .thresholds import ThresholdTable

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)
_APOSTROPHES = str.maketrans("", "", "'’ʼ")
# Number with an optional single decimal point and an optional trailing
# alphabetic unit, not glued to a preceding letter or digit
# ("4.4mm", "65w", "13"; but not the "65" of "model65").
_NUMERIC_TOKEN_RE = re.compile(r"(?<![^\W_])(\d+(?:\.\d+)?)([^\W\d_]*)", re.UNICODE)

MASCULINE_TOKENS = frozenset(
    {"men", "mens", "man", "male", "boys", "boy", "gentleman", "gents"}
)
FEMININE_TOKENS = frozenset(
    {"women", "womens", "woman", "female", "ladies", "lady", "girls", "girl"}
)


class GenderClass(Enum):
    MASCULINE = "masculine"
    FEMININE = "feminine"
    NEUTRAL = "neutral"


class FilterReason(Enum):
    GENDER = "GENDER"
    NUMERIC = "NUMERIC"


@dataclass(frozen=True)
class GenderLexicon:
    """Token sets driving the gender classifier; extensible from a JSON file."""

    masculine: frozenset[str] = MASCULINE_TOKENS
    feminine: frozenset[str] = FEMININE_TOKENS

    @classmethod
    def from_file(cls, path: str) -> "GenderLexicon":
        """Load extra tokens from JSON {"masculine": [...], "feminine": [...]}."""
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(
            masculine=MASCULINE_TOKENS | frozenset(doc.get("masculine", [])),
            feminine=FEMININE_TOKENS | frozenset(doc.get("feminine", [])),
        )


DEFAULT_LEXICON = GenderLexicon()


def tokenize(text: str) -> list[str]:
    """Lowercase, drop apostrophes, split on anything that is not a letter
    or digit ("Men's Shoes" -> ["mens", "shoes"])."""
    return _TOKEN_RE.findall(text.lower().translate(_APOSTROPHES))


def gender_class(text: str, lexicon: GenderLexicon = DEFAULT_LEXICON) -> GenderClass:
    tokens = set(tokenize(text))
    masc = bool(tokens & lexicon.masculine)
    fem = bool(tokens & lexicon.feminine)
    if masc and not fem:
        return GenderClass.MASCULINE
    if fem and not masc:
        return GenderClass.FEMININE
    return GenderClass.NEUTRAL


def gender_consistent(a: str, b: str, lexicon: GenderLexicon = DEFAULT_LEXICON) -> bool:
    """True unless the two texts carry opposite gender classes."""
    ga = gender_class(a, lexicon)
    gb = gender_class(b, lexicon)
    return ga == gb or GenderClass.NEUTRAL in (ga, gb)


def numeric_tokens(text: str) -> set[tuple[float, str]]:
    """(value, unit) pairs like "13" -> (13, ""), "65w" -> (65, "w"),
    "4.4mm" -> (4.4, "mm").

    Scans the raw lowercased text so decimal points survive (the broad-match
    tokenizer splits on them).
    """
    return {
        (float(value), unit)
        for value, unit in _NUMERIC_TOKEN_RE.findall(text.lower())
    }


def numeric_consistent(original: str, candidate: str) -> bool:
    """False only when a unit present on both sides carries different values.

    A candidate with no numbers, or with numbers in units the original does
    not mention, is accepted.
    """
    a = numeric_tokens(original)
    b = numeric_tokens(candidate)
    if not a or not b:
        return True
    units_a: dict[str, set[float]] = {}
    for value, unit in a:
        units_a.setdefault(unit, set()).add(value)
    units_b: dict[str, set[float]] = {}
    for value, unit in b:
        units_b.setdefault(unit, set()).add(value)
    for unit in units_a.keys() & units_b.keys():
        if units_a[unit] != units_b[unit]:
            return False
    return True


@dataclass
class Variant:
    keyword: KeywordRef
    distance: float
    similarity: float
    filtered_reason: FilterReason | None = None

    @property
    def accepted(self) -> bool:
        return self.filtered_reason is None


@dataclass
class ExpansionRecord:
    origin: KeywordRef
    cluster: int
    tau_used: float
    variants: list[Variant] = field(default_factory=list)

    def accepted_variants(self) -> list[Variant]:
        return [v for v in self.variants if v.accepted]


def expand_keyword(
    origin: KeywordRef,
    vector: np.ndarray,
    index: FlatIndex,
    clustering: Clustering,
    table: ThresholdTable,
    k_neighbors: int = DEFAULT_K,
    filters_enabled: bool = True,
    lexicon: GenderLexicon = DEFAULT_LEXICON,
) -> ExpansionRecord:
    """Alg.: assign cluster, retrieve neighbors, gate by the cluster cutoff,
    then apply gender and numeric filters (first failing filter wins)."""
    cluster, _ = assign_cluster(clustering.centroids, vector)
    tau = table.tau_for(cluster)
    exclude = origin.id if origin.market == index.market else None
    neighbors = knn_search(index, vector, k=k_neighbors, exclude_id=exclude)
    variants: list[Variant] = []
    for nb in neighbors:
        if nb.distance > tau:
            continue
        ref = index.ref_by_id(nb.id)
        reason: FilterReason | None = None
        if filters_enabled:
            if not gender_consistent(origin.text, ref.text, lexicon):
                reason = FilterReason.GENDER
            elif not numeric_consistent(origin.text, ref.text):
                reason = FilterReason.NUMERIC
        variants.append(
            Variant(
                keyword=ref,
                distance=nb.distance,
                similarity=1.0 - nb.distance,
                filtered_reason=reason,
            )
        )
    return ExpansionRecord(origin=origin, cluster=cluster, tau_used=tau, variants=variants)


def expand_all(
    embedding_set: EmbeddingSet,
    index: FlatIndex,
    clustering: Clustering,
    table: ThresholdTable,
    k_neighbors: int = DEFAULT_K,
    filters_enabled: bool = True,
    lexicon: GenderLexicon = DEFAULT_LEXICON,
) -> list[ExpansionRecord]:
    """Expand every keyword of a set, in ascending-id order."""
    records = []
    for ref in sorted(embedding_set.refs, key=lambda r: r.id):
        records.append(
            expand_keyword(
                ref,
                embedding_set.vector(ref),
                index,
                clustering,
                table,
                k_neighbors=k_neighbors,
                filters_enabled=filters_enabled,
                lexicon=lexicon,
            )
        )
    return records


def _ref_doc(ref: KeywordRef) -> dict:
    return {"market": ref.market, "text": ref.text, "id": ref.id}


def record_to_doc(record: ExpansionRecord) -> dict:
    return {
        "origin": _ref_doc(record.origin),
        "cluster": record.cluster,
        "tau_used": record.tau_used,
        "variants": [
            {
                "keyword": _ref_doc(v.keyword),
                "distance": v.distance,
                "similarity": v.similarity,
                **(
                    {"filtered_reason": v.filtered_reason.value}
                    if v.filtered_reason is not None
                    else {}
                ),
            }
            for v in record.variants
        ],
    }


def record_from_doc(doc: dict) -> ExpansionRecord:
    def ref(d: dict) -> KeywordRef:
        return KeywordRef(market=d["market"], text=d["text"], id=int(d["id"]))

    variants = [
        Variant(
            keyword=ref(v["keyword"]),
            distance=float(v["distance"]),
            similarity=float(v["similarity"]),
            filtered_reason=(
                FilterReason(v["filtered_reason"]) if "filtered_reason" in v else None
            ),
        )
        for v in doc["variants"]
    ]
    return ExpansionRecord(
        origin=ref(doc["origin"]),
        cluster=int(doc["cluster"]),
        tau_used=float(doc["tau_used"]),
        variants=variants,
    )


def save_expansions(records: list[ExpansionRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_doc(record), separators=(",", ":"), sort_keys=True))
            fh.write("\n")


def load_expansions(path: str) -> list[ExpansionRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(record_from_doc(json.loads(line)))
    return records


def format_expansion_table(records: list[ExpansionRecord]) -> str:
    """Two-column text table: origin keyword and its accepted expansions."""
    lines = ["Original Keyword | Semantic Expansions", "---|---"]
    for record in records:
        accepted = ", ".join(v.keyword.text for v in record.accepted_variants())
        lines.append(f"{record.origin.text} | {accepted}")
    return "\n".join(lines)
