"""Superset curation pipeline: subsample, cluster, de-duplicate, retrieve.

Turns a large external embedding corpus into task-relevant training
candidates: seeded subsampling bounds memory, spherical k-means partitions
the corpus, a greedy pass drops near-duplicates inside each cluster, and
retrieval routes every query through its nearest clusters with a hard
cosine-distance cutoff on the results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .index import IndexConfig, VectorIndex
from .vectors import as_unit_rows


@dataclass
class ClusterAssignment:
    centroids: np.ndarray  # (K, dim), unit rows
    assignment: dict[str, int]  # sample id -> cluster
    num_clusters: int
    cost: float  # sum of cosine distances to assigned centroids


@dataclass
class RetrievalHit:
    target_id: str
    hit_id: str
    distance: float


def default_cluster_count(n: int) -> int:
    """Cluster count scaled to corpus size (one cluster per ~2000 points)."""
    return max(1, n // 2000)


def subsample(ids: list[str], vectors: np.ndarray, fraction: float,
              seed: int) -> tuple[list[str], np.ndarray]:
    """Seeded uniform subsample without replacement of round(fraction * n)."""
    n = len(ids)
    if n == 0:
        raise ValueError("cannot subsample an empty pool")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    size = int(round(fraction * n))
    size = max(1, min(n, size))
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = np.sort(rng.choice(n, size=size, replace=False))
    return [ids[i] for i in chosen], vectors[chosen]


def _plusplus_init(vecs: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding with cosine distance as the D^2 weight.

    On unit vectors squared Euclidean distance is 2x the cosine distance, so
    weighting draws by cosine distance reproduces the classic distribution.
    """
    n = vecs.shape[0]
    centroids = np.empty((k, vecs.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = vecs[first]
    min_dist = 1.0 - vecs @ centroids[0]
    np.clip(min_dist, 0.0, None, out=min_dist)
    for i in range(1, k):
        total = float(min_dist.sum())
        if total <= 0.0:
            # Everything already coincides with a centroid: pick any point
            # not yet chosen (duplicate-heavy pools, or k close to n).
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=min_dist / total))
        centroids[i] = vecs[idx]
        np.minimum(min_dist, np.clip(1.0 - vecs @ centroids[i], 0.0, None),
                   out=min_dist)
    return centroids


def kmeans(ids: list[str], vectors: np.ndarray, k: int, max_iters: int = 50,
           seed: int = 0) -> ClusterAssignment:
    """Spherical k-means over unit vectors with k-means++ style seeding.

    The within-cluster cosine cost is non-increasing per iteration; stops at
    the assignment fixpoint or ``max_iters``. Empty clusters keep their old
    centroid so monotonicity is never violated.
    """
    n = len(ids)
    if k > n:
        raise ValueError(f"k={k} exceeds pool size {n}")
    if k < 1:
        raise ValueError("k must be >= 1")
    vecs = as_unit_rows(vectors, vectors.shape[1]).astype(np.float64)
    rng = np.random.Generator(np.random.PCG64(seed))
    centroids = _plusplus_init(vecs, k, rng)
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iters):
        sims = vecs @ centroids.T
        new_labels = np.argmax(sims, axis=1)
        changed = bool(np.any(new_labels != labels))
        labels = new_labels
        for c in range(k):
            members = vecs[labels == c]
            if members.shape[0] == 0:
                continue
            mean = members.sum(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 0:
                centroids[c] = mean / norm
        if not changed:
            break
    sims = vecs @ centroids.T
    labels = np.argmax(sims, axis=1)
    cost = float(np.sum(np.clip(1.0 - sims[np.arange(n), labels], 0.0, None)))
    assignment = {ids[i]: int(labels[i]) for i in range(n)}
    return ClusterAssignment(centroids=centroids, assignment=assignment,
                             num_clusters=k, cost=cost)


def dedup_cluster(ids: list[str], vectors: np.ndarray,
                  threshold_distance: float) -> list[int]:
    """Greedy insertion-order de-duplication.

    A member is dropped iff an already-kept member lies within the distance
    threshold; returns kept positions, so no two kept members are within the
    threshold of each other.
    """
    if not 0.0 <= threshold_distance <= 2.0:
        raise ValueError("threshold_distance must lie in [0, 2]")
    n = len(ids)
    if n == 0:
        return []
    vecs = np.asarray(vectors, dtype=np.float32)
    kept_mat = np.empty((n, vecs.shape[1]), dtype=np.float32)
    kept: list[int] = []
    sim_floor = 1.0 - threshold_distance
    for i in range(n):
        if kept:
            sims = kept_mat[: len(kept)] @ vecs[i]
            if float(sims.max()) >= sim_floor:
                continue
        kept_mat[len(kept)] = vecs[i]
        kept.append(i)
    return kept


@dataclass
class CorpusIndex:
    """Clustered, de-duplicated corpus with per-cluster search indexes."""

    centroids: np.ndarray
    cluster_ids: list[list[str]] = field(default_factory=list)
    cluster_indexes: list[VectorIndex] = field(default_factory=list)

    @property
    def size(self) -> int:
        return sum(len(ids) for ids in self.cluster_ids)

    def all_ids(self) -> list[str]:
        out: list[str] = []
        for ids in self.cluster_ids:
            out.extend(ids)
        return out


def build_corpus_index(
    ids: list[str],
    vectors: np.ndarray,
    num_clusters: int | None = None,
    dedup_distance: float = 0.2,
    kmeans_iters: int = 50,
    seed: int = 0,
    index_config: IndexConfig | None = None,
) -> CorpusIndex:
    """Cluster the corpus, de-duplicate each cluster, index the survivors.

    Cluster build and per-cluster work are independent; they run
    sequentially here but share no state across clusters.
    """
    vecs = as_unit_rows(vectors, vectors.shape[1])
    if num_clusters is None:
        num_clusters = default_cluster_count(len(ids))
    clusters = kmeans(ids, vecs, num_clusters, max_iters=kmeans_iters, seed=seed)
    labels = np.array([clusters.assignment[sid] for sid in ids])
    out = CorpusIndex(centroids=clusters.centroids)
    base_cfg = index_config or IndexConfig(mode="exact")
    for c in range(num_clusters):
        positions = np.nonzero(labels == c)[0]
        member_ids = [ids[i] for i in positions]
        member_vecs = vecs[positions]
        kept = dedup_cluster(member_ids, member_vecs, dedup_distance)
        kept_ids = [member_ids[i] for i in kept]
        idx = VectorIndex(vecs.shape[1], base_cfg)
        if kept_ids:
            idx.insert_batch(kept_ids, member_vecs[kept])
        out.cluster_ids.append(kept_ids)
        out.cluster_indexes.append(idx)
    return out


def retrieve(
    corpus: CorpusIndex,
    target_ids: list[str],
    targets: np.ndarray,
    k: int,
    max_distance: float = 0.2,
    clusters_per_target: int = 3,
    global_dedup: bool = True,
) -> list[RetrievalHit]:
    """Per-target k nearest corpus samples within the distance cutoff.

    Each target is routed through its ``clusters_per_target`` nearest
    clusters. With ``global_dedup`` a corpus sample appears at most once in
    the whole manifest (kept at its smallest distance), matching how the
    results feed a training set; switch it off to score per-target recall.
    """
    if not corpus.cluster_indexes:
        raise ValueError("corpus index is empty: build it before retrieving")
    tvecs = as_unit_rows(targets, corpus.centroids.shape[1])
    q = min(clusters_per_target, len(corpus.cluster_indexes))
    hits: list[RetrievalHit] = []
    for ti, tid in enumerate(target_ids):
        v = tvecs[ti]
        cent_sims = corpus.centroids @ v.astype(np.float64)
        routed = np.argsort(-cent_sims)[:q]
        found: list[tuple[float, str]] = []
        for c in routed:
            for hit in corpus.cluster_indexes[c].knn(v, k):
                if hit.cosine_distance <= max_distance:
                    found.append((hit.cosine_distance, hit.sample_id))
        found.sort(key=lambda t: (t[0], t[1]))
        for dist, hid in found[:k]:
            hits.append(RetrievalHit(target_id=str(tid), hit_id=hid, distance=dist))
    if global_dedup:
        best: dict[str, RetrievalHit] = {}
        order: list[str] = []
        for h in hits:
            prev = best.get(h.hit_id)
            if prev is None:
                best[h.hit_id] = h
                order.append(h.hit_id)
            elif h.distance < prev.distance:
                best[h.hit_id] = h
        hits = [best[hid] for hid in order]
    return hits


def manifest_lines(hits: list[RetrievalHit]) -> list[str]:
    """Newline-delimited retrieval manifest records."""
    return [f"{h.target_id}\t{h.hit_id}\t{h.distance:.9f}" for h in hits]
