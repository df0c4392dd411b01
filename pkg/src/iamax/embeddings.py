"""Embedding analytics: clustering users, sizing the cluster count, and
deriving a similarity threshold.

Embeddings arrive as a JSON table mapping node ids to vectors.  Users
are clustered with k-means on unit-normalized vectors, the cluster
count is picked at the knee of the error curve, and the similarity
threshold ``alpha`` is the loosest intra-cluster cosine distance
observed, so pairs farther apart than anything within a cluster count
as dissimilar.

k-means is implemented here rather than delegated so every Lloyd round
can be observed: the per-round error trail is part of the result and is
asserted non-increasing in tests.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger("iamax.embeddings")

NODE_KINDS = ("user", "datastore", "role", "group")


class EmbeddingError(ValueError):
    """Raised when an embedding table is malformed."""


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]
    kinds: dict[str, str]

    def ids_of_kind(self, kind: str) -> list[str]:
        return sorted(i for i, k in self.kinds.items() if k == kind)

    def matrix(self, ids: list[str]) -> np.ndarray:
        return np.stack([self.vectors[i] for i in ids])


def build_table(dim: int, entries: dict[str, tuple[str, np.ndarray]]) -> EmbeddingTable:
    """Assemble and validate a table from {id: (kind, vector)}."""
    vectors: dict[str, np.ndarray] = {}
    kinds: dict[str, str] = {}
    for node_id, (kind, vec) in entries.items():
        if kind not in NODE_KINDS:
            raise EmbeddingError(f"unknown node kind {kind!r} for {node_id!r}")
        v = np.asarray(vec, dtype=np.float64)
        if v.shape != (dim,):
            raise EmbeddingError(
                f"vector for {node_id!r} has shape {v.shape}, expected ({dim},)"
            )
        if not np.isfinite(v).all():
            raise EmbeddingError(f"vector for {node_id!r} contains non-finite values")
        v.setflags(write=False)
        vectors[node_id] = v
        kinds[node_id] = kind
    return EmbeddingTable(dim=dim, vectors=vectors, kinds=kinds)


def load_embeddings(path: str | Path) -> EmbeddingTable:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if "dim" not in obj or "nodes" not in obj:
        raise EmbeddingError(f"missing 'dim' or 'nodes' in {path}")
    entries = {
        node_id: (node.get("kind", "user"), np.array(node["vec"], dtype=np.float64))
        for node_id, node in obj["nodes"].items()
    }
    return build_table(int(obj["dim"]), entries)


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    obj = {
        "dim": table.dim,
        "nodes": {
            i: {"kind": table.kinds[i], "vec": table.vectors[i].tolist()}
            for i in sorted(table.vectors)
        },
    }
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    if (norms < 1e-12).any():
        raise EmbeddingError("zero vector cannot be unit-normalized")
    return x / norms[:, None]


@dataclass(frozen=True)
class ClusteringResult:
    k: int
    ids: tuple[str, ...]
    labels: np.ndarray
    centroids: np.ndarray
    sse: float
    sse_history: tuple[float, ...]

    @property
    def assignment(self) -> dict[str, int]:
        return {i: int(l) for i, l in zip(self.ids, self.labels)}


def _kmeans_once(x: np.ndarray, k: int, rng: np.random.Generator, max_rounds: int):
    n = x.shape[0]
    # k-means++ seeding
    centroids = np.empty((k, x.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = x[first]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 1e-18:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[c] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[c]) ** 2).sum(axis=1))

    labels = np.full(n, -1)
    history: list[float] = []
    for _ in range(max_rounds):
        dist = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = dist.argmin(axis=1)
        for c in range(k):
            mask = new_labels == c
            if mask.any():
                centroids[c] = x[mask].mean(axis=0)
            else:
                # revive an empty cluster with the worst-fit point
                far = int(dist[np.arange(n), new_labels].argmax())
                centroids[c] = x[far]
                new_labels[far] = c
        sse = float(((x - centroids[new_labels]) ** 2).sum())
        history.append(sse)
        if (new_labels == labels).all():
            break
        labels = new_labels
    return labels, centroids, history[-1], history


def kmeans(
    table: EmbeddingTable,
    k: int,
    *,
    seed: int = 0,
    restarts: int = 10,
    max_rounds: int = 300,
) -> ClusteringResult:
    """Cluster user embeddings (unit-normalized) with k-means.

    Runs ``restarts`` independent seedings and keeps the lowest-error
    run.  Labels are renumbered by first appearance so output is stable.
    """
    ids = table.ids_of_kind("user")
    if not ids:
        raise EmbeddingError("no user vectors to cluster")
    if k < 1 or k > len(ids):
        raise EmbeddingError(f"k={k} out of range for {len(ids)} users")
    x = unit_rows(table.matrix(ids))
    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        labels, centroids, sse, history = _kmeans_once(x, k, rng, max_rounds)
        if best is None or sse < best[2]:
            best = (labels, centroids, sse, history)
    labels, centroids, sse, history = best
    remap: dict[int, int] = {}
    for l in labels:
        if int(l) not in remap:
            remap[int(l)] = len(remap)
    # clusters never hit by argmin keep a stable tail position
    for c in range(k):
        if c not in remap:
            remap[c] = len(remap)
    new_labels = np.array([remap[int(l)] for l in labels])
    order = sorted(range(k), key=lambda c: remap[c])
    return ClusteringResult(
        k=k,
        ids=tuple(ids),
        labels=new_labels,
        centroids=centroids[order],
        sse=sse,
        sse_history=tuple(history),
    )


def knee_point(ks: list[int], sses: list[float]) -> int:
    """Pick the curve's knee: normalize both axes to [0, 1] and take the
    point farthest toward the low-k, low-error corner; ties go to the
    smallest k."""
    if len(ks) != len(sses) or len(ks) < 1:
        raise ValueError("ks and sses must be equal-length, non-empty")
    if len(ks) == 1:
        return ks[0]
    xs = np.array(ks, dtype=float)
    ys = np.array(sses, dtype=float)
    x_span = xs.max() - xs.min()
    y_span = ys.max() - ys.min()
    xn = (xs - xs.min()) / x_span if x_span > 0 else np.zeros_like(xs)
    yn = (ys - ys.min()) / y_span if y_span > 0 else np.zeros_like(ys)
    score = (1.0 - xn) - yn
    best = 0
    for i in range(1, len(ks)):
        if score[i] > score[best] + 1e-12:
            best = i
    return ks[best]


@dataclass(frozen=True)
class SelectKResult:
    k_opt: int
    ks: tuple[int, ...]
    sses: tuple[float, ...]
    clipped: bool
    clustering: ClusteringResult


def select_k(
    table: EmbeddingTable,
    k_min: int = 5,
    k_max: int = 25,
    *,
    seed: int = 0,
    restarts: int = 10,
) -> SelectKResult:
    """Grid-search k over [k_min, k_max] and pick the error-curve knee.

    The grid is clipped to the user population; a degenerate grid of
    fewer than three points falls back to its smallest k.
    """
    n = len(table.ids_of_kind("user"))
    clipped = False
    hi = k_max
    if hi > n:
        hi = n
        clipped = True
        log.warning("select_k: clipping k_max from %d to population %d", k_max, n)
    lo = min(k_min, hi)
    ks = list(range(lo, hi + 1))
    runs = {k: kmeans(table, k, seed=seed, restarts=restarts) for k in ks}
    sses = [runs[k].sse for k in ks]
    if len(ks) < 3:
        log.warning("select_k: degenerate grid %s, falling back to k=%d", ks, lo)
        k_opt = lo
    else:
        k_opt = knee_point(ks, sses)
    return SelectKResult(
        k_opt=k_opt,
        ks=tuple(ks),
        sses=tuple(sses),
        clipped=clipped,
        clustering=runs[k_opt],
    )


def compute_alpha(table: EmbeddingTable, clustering: ClusteringResult) -> float:
    """Loosest intra-cluster pairwise cosine distance on unit vectors.

    Pairs farther apart than this are more dissimilar than anything the
    clustering itself tolerated.  Singleton clusters contribute nothing;
    all-singleton clusterings give 0.0.
    """
    x = unit_rows(table.matrix(list(clustering.ids)))
    worst = 0.0
    for c in range(clustering.k):
        mask = clustering.labels == c
        if mask.sum() < 2:
            continue
        xc = x[mask]
        sim = xc @ xc.T
        dist = 1.0 - sim
        np.fill_diagonal(dist, 0.0)
        worst = max(worst, float(dist.max()))
    return worst


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < 1e-12 or nb < 1e-12:
        raise EmbeddingError("cosine distance undefined for zero vectors")
    return max(0.0, 1.0 - float(np.dot(a, b)) / (na * nb))
