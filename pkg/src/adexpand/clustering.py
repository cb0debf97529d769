"""Per-market k-means over keyword embeddings, plus elbow and k-fold
stability diagnostics.

Centroids are arithmetic means and are NOT re-normalized; every distance to a
centroid is the cosine distance to the centroid's normalized direction, which
keeps assignment consistent with the unit-vector geometry of the corpus. The
within-cluster sum of squares (WCSS) used for the elbow and the convergence
test is the plain squared Euclidean distance to the assigned mean.

All randomness (k-means++ seeding) comes from a splitmix64 stream, so a run
is reproducible from (set, cluster count, seed) alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingSet
from .errors import (
    EmptySetError,
    TooManyClustersError,
    UnassignedKeywordError,
    ZeroVectorError,
)
from .rng import SplitMix64

DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-6
DEFAULT_FOLDS = 5


@dataclass
class Clustering:
    """Trained partition: mean centroids plus keyword-id assignments."""

    market: str
    cluster_count: int
    centroids: np.ndarray
    assignments: dict[int, int]
    wcss_history: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def sizes(self) -> list[int]:
        counts = [0] * self.cluster_count
        for c in self.assignments.values():
            counts[c] += 1
        return counts


@dataclass
class StabilityReport:
    folds: int
    assignment_consistency: float
    mean_compactness: float


def _normalized_rows(centroids: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(centroids, axis=1)
    if np.any(norms <= 1e-12):
        raise ZeroVectorError("centroid has zero norm")
    return centroids / norms[:, None]


def _assign_all(matrix: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cosine assignment of every row to its nearest centroid direction.

    Returns (labels, distances). One matvec per centroid keeps the reduction
    order independent of BLAS threading; argmin resolves ties to the lowest
    cluster index.
    """
    directions = _normalized_rows(centroids)
    dists = np.empty((centroids.shape[0], matrix.shape[0]), dtype=np.float64)
    for j in range(centroids.shape[0]):
        dists[j] = 1.0 - matrix.astype(np.float64) @ directions[j]
    labels = np.argmin(dists, axis=0)
    return labels, dists[labels, np.arange(matrix.shape[0])]


def assign_cluster(centroids: np.ndarray, v: np.ndarray) -> tuple[int, float]:
    """Nearest centroid by cosine distance; ties go to the lowest index."""
    labels, dists = _assign_all(v[None, :], np.asarray(centroids, dtype=np.float64))
    return int(labels[0]), float(dists[0])


def _seed_centroids(matrix: np.ndarray, cluster_count: int, rng: SplitMix64) -> np.ndarray:
    """k-means++ style seeding driven by the splitmix64 stream.

    Selection weights are squared Euclidean distances to the nearest chosen
    center; already-chosen rows carry zero weight. When every weight is zero
    (duplicate-heavy corpora), the lowest unchosen row is taken.
    """
    n = matrix.shape[0]
    X = matrix.astype(np.float64)
    chosen = [rng.next_index(n)]
    # Squared Euclidean between unit vectors = 2 * cosine distance.
    best = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    while len(chosen) < cluster_count:
        total = float(best.sum())
        if total <= 0.0:
            taken = set(chosen)
            idx = next(i for i in range(n) if i not in taken)
        else:
            idx = rng.weighted_index(best)
        chosen.append(idx)
        best = np.minimum(best, np.sum((X - X[idx]) ** 2, axis=1))
    return X[chosen].copy()


def _repair_empty_clusters(
    matrix: np.ndarray, centroids: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Reseed each empty cluster to the point farthest from its centroid."""
    counts = np.bincount(labels, minlength=centroids.shape[0])
    for j in np.flatnonzero(counts == 0):
        _, dists = _assign_all(matrix, centroids[j : j + 1])
        # Farthest point overall; skip points that are their cluster's only member.
        order = np.argsort(-dists, kind="stable")
        for p in order:
            if counts[labels[p]] > 1:
                counts[labels[p]] -= 1
                labels[p] = j
                counts[j] = 1
                break
    return labels


def _means(matrix: np.ndarray, labels: np.ndarray, cluster_count: int) -> np.ndarray:
    sums = np.zeros((cluster_count, matrix.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, matrix.astype(np.float64))
    counts = np.bincount(labels, minlength=cluster_count).astype(np.float64)
    counts[counts == 0.0] = 1.0
    return sums / counts[:, None]


def _wcss_of(matrix: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    diffs = matrix.astype(np.float64) - centroids[labels]
    return float(np.sum(diffs * diffs))


def kmeans(
    embedding_set: EmbeddingSet,
    cluster_count: int,
    seed: int,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> Clustering:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when the relative WCSS improvement drops below tol, assignments
    stop changing, or max_iter is reached. The recorded wcss_history holds
    one value per iteration, measured after the means update.
    """
    n = len(embedding_set)
    if n == 0:
        raise EmptySetError("cannot cluster an empty set")
    if cluster_count > n:
        raise TooManyClustersError(f"{cluster_count} clusters for {n} points")
    if cluster_count < 1:
        raise ValueError("cluster_count must be at least 1")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if tol < 0:
        raise ValueError("tol must be non-negative")

    matrix = embedding_set.matrix
    rng = SplitMix64(seed)
    centroids = _seed_centroids(matrix, cluster_count, rng)

    labels = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iter):
        new_labels, _ = _assign_all(matrix, centroids)
        new_labels = _repair_empty_clusters(matrix, centroids, new_labels)
        unchanged = bool(np.array_equal(new_labels, labels))
        labels = new_labels
        centroids = _means(matrix, labels, cluster_count)
        history.append(_wcss_of(matrix, centroids, labels))
        if unchanged:
            break
        if len(history) >= 2:
            prev, cur = history[-2], history[-1]
            if prev <= 1e-300 or (prev - cur) / prev < tol:
                break

    # One more assignment pass so stored labels agree with assign_cluster on
    # the final centroids; kept only if it leaves no cluster empty.
    final_labels, _ = _assign_all(matrix, centroids)
    if np.all(np.bincount(final_labels, minlength=cluster_count) > 0):
        labels = final_labels

    assignments = {embedding_set.refs[i].id: int(labels[i]) for i in range(n)}
    return Clustering(
        market=embedding_set.market,
        cluster_count=cluster_count,
        centroids=centroids,
        assignments=assignments,
        wcss_history=history,
    )


def wcss(clustering: Clustering, embedding_set: EmbeddingSet) -> float:
    """Sum of squared Euclidean distances to each point's assigned mean."""
    labels = np.empty(len(embedding_set), dtype=np.int64)
    for i, ref in enumerate(embedding_set.refs):
        if ref.id not in clustering.assignments:
            raise UnassignedKeywordError(f"keyword id {ref.id} has no assignment")
        labels[i] = clustering.assignments[ref.id]
    return _wcss_of(embedding_set.matrix, clustering.centroids, labels)


def _fold_of_rank(rank: int, folds: int) -> int:
    return rank % folds


def _subset(embedding_set: EmbeddingSet, keep: list[int]) -> EmbeddingSet:
    """View of selected rows; refs keep their original ids."""
    return EmbeddingSet(
        market=embedding_set.market,
        dim=embedding_set.dim,
        refs=[embedding_set.refs[i] for i in keep],
        matrix=embedding_set.matrix[keep],
    )


def _fold_indices(n: int, folds: int) -> list[list[int]]:
    """Round-robin fold membership over points in id order."""
    out: list[list[int]] = [[] for _ in range(folds)]
    for rank in range(n):
        out[_fold_of_rank(rank, folds)].append(rank)
    return out


def elbow_sweep(
    embedding_set: EmbeddingSet,
    k_list: list[int],
    seed: int,
    folds: int = DEFAULT_FOLDS,
) -> list[tuple[int, float]]:
    """Mean held-in WCSS per candidate cluster count, for the elbow plot.

    With folds=1 the whole set is trained on once and the value equals the
    plain WCSS of that clustering.
    """
    if not k_list:
        raise ValueError("k_list must be non-empty")
    if list(k_list) != sorted(k_list):
        raise ValueError("k_list must be ascending")
    if folds < 1:
        raise ValueError("folds must be at least 1")
    n = len(embedding_set)
    held_in_sets: list[EmbeddingSet] = []
    if folds == 1:
        held_in_sets.append(embedding_set)
    else:
        fold_members = _fold_indices(n, folds)
        for f in range(folds):
            keep = [i for i in range(n) if i not in set(fold_members[f])]
            held_in_sets.append(_subset(embedding_set, keep))
    rows: list[tuple[int, float]] = []
    for m in k_list:
        values = []
        for sub in held_in_sets:
            model = kmeans(sub, m, seed)
            values.append(wcss(model, sub))
        rows.append((m, float(np.mean(values))))
    return rows


def kfold_stability(
    embedding_set: EmbeddingSet,
    cluster_count: int,
    folds: int,
    seed: int,
) -> StabilityReport:
    """Cross-fold agreement of the induced partitions.

    Each fold trains on its held-in points and labels the full corpus by
    nearest centroid. Consistency is the average, over fold pairs, of the
    fraction of point pairs whose co-assignment relation (same cluster or
    not) agrees between the two labelings; compactness is the mean cosine
    distance of held-out points to their assigned centroid direction.
    """
    if folds < 2:
        raise ValueError("folds must be at least 2")
    n = len(embedding_set)
    matrix = embedding_set.matrix
    fold_members = _fold_indices(n, folds)

    labelings: list[np.ndarray] = []
    compactness: list[float] = []
    for f in range(folds):
        held_out = fold_members[f]
        keep = [i for i in range(n) if i not in set(held_out)]
        model = kmeans(_subset(embedding_set, keep), cluster_count, seed)
        labels, dists = _assign_all(matrix, model.centroids)
        labelings.append(labels)
        compactness.append(float(np.mean(dists[held_out])) if held_out else 0.0)

    triu = np.triu_indices(n, k=1)
    agreements = []
    for f in range(folds):
        same_f = (labelings[f][:, None] == labelings[f][None, :])[triu]
        for g in range(f + 1, folds):
            same_g = (labelings[g][:, None] == labelings[g][None, :])[triu]
            agreements.append(float(np.mean(same_f == same_g)))
    return StabilityReport(
        folds=folds,
        assignment_consistency=float(np.mean(agreements)),
        mean_compactness=float(np.mean(compactness)),
    )


def _round9(x: float) -> float:
    return float(f"{x:.9g}")


def save_clustering(clustering: Clustering, path: str) -> None:
    doc = {
        "market": clustering.market,
        "M": clustering.cluster_count,
        "dim": clustering.dim,
        "centroids": [[_round9(float(x)) for x in row] for row in clustering.centroids],
        "assignments": {str(k): v for k, v in sorted(clustering.assignments.items())},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def load_clustering(path: str) -> Clustering:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return Clustering(
        market=doc["market"],
        cluster_count=int(doc["M"]),
        centroids=np.array(doc["centroids"], dtype=np.float64),
        assignments={int(k): int(v) for k, v in doc["assignments"].items()},
    )
