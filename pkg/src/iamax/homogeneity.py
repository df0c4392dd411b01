"""Group homogeneity enforcement by cut generation.

A generated group should contain behaviorally similar users.  Rather
than folding a similarity term into the objective, dissimilar pairs are
excluded lazily: solve, find co-resident user pairs whose embedding
cosine distance exceeds the threshold ``alpha``, add those pairs as
exclusion cuts, and re-solve warm-started, until no violations remain
or the cuts make the instance infeasible (then the last feasible
solution stands).

Cluster-label entropy of each group tracks how mixed groups are; the
member-weighted mean is logged per iteration in the generation trace.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .embeddings import ClusteringResult, EmbeddingTable, compute_alpha, unit_rows
from .model import AccessInstance, GeneratedPolicy
from .optimizer import (
    STATUS_FEASIBLE,
    PenaltyConfig,
    SolveConfig,
    SolveResult,
    solve,
)

log = logging.getLogger("iamax.homogeneity")

_DIST_TOL = 1e-12  # round-off guard so identical vectors never violate


@dataclass(frozen=True)
class SimilarityModel:
    """User embeddings (unit rows, ordered like the instance), a
    dissimilarity threshold, and a cluster label per user."""

    users: tuple[str, ...]
    matrix: np.ndarray
    alpha: float
    cluster_of: dict[str, int]

    @classmethod
    def build(
        cls,
        inst: AccessInstance,
        table: EmbeddingTable,
        clustering: ClusteringResult,
        alpha: float | None = None,
    ) -> "SimilarityModel":
        missing = [u for u in inst.users if u not in table.vectors]
        if missing:
            raise ValueError(f"users without embeddings: {missing[:10]}")
        mat = unit_rows(table.matrix(list(inst.users)))
        mat.setflags(write=False)
        cluster_of = clustering.assignment
        missing_c = [u for u in inst.users if u not in cluster_of]
        if missing_c:
            raise ValueError(f"users without cluster labels: {missing_c[:10]}")
        if alpha is None:
            alpha = compute_alpha(table, clustering)
        if alpha < 0:
            raise ValueError("alpha must be >= 0")
        return cls(
            users=tuple(inst.users),
            matrix=mat,
            alpha=float(alpha),
            cluster_of=dict(cluster_of),
        )

    def distance(self, u1: str, u2: str) -> float:
        idx = {u: i for i, u in enumerate(self.users)}
        if u1 not in idx or u2 not in idx:
            raise KeyError(f"unknown user in distance query: {u1!r}/{u2!r}")
        return max(0.0, 1.0 - float(self.matrix[idx[u1]] @ self.matrix[idx[u2]]))


def pair_distance(sm: SimilarityModel, u1: str, u2: str) -> float:
    return sm.distance(u1, u2)


@dataclass(frozen=True)
class Violation:
    u1: str
    u2: str
    group: int
    distance: float


def separate(
    inst: AccessInstance, pol: GeneratedPolicy, sm: SimilarityModel
) -> list[Violation]:
    """Find co-resident pairs more distant than alpha, most-violated
    first (ties by user indices).  Each unordered pair appears once,
    tagged with the lowest shared group."""
    if tuple(inst.users) != sm.users:
        raise ValueError("similarity model was built for a different instance")
    dist = 1.0 - sm.matrix @ sm.matrix.T
    seen: dict[tuple[int, int], int] = {}
    for g in range(pol.num_groups):
        members = np.nonzero(pol.ug[:, g])[0]
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                i, j = int(members[a]), int(members[b])
                if dist[i, j] > sm.alpha + _DIST_TOL and (i, j) not in seen:
                    seen[(i, j)] = g
    out = [
        Violation(inst.users[i], inst.users[j], g, max(0.0, float(dist[i, j])))
        for (i, j), g in seen.items()
    ]
    out.sort(key=lambda v: (-v.distance, inst.user_index[v.u1], inst.user_index[v.u2]))
    return out


@dataclass(frozen=True)
class EntropyReport:
    per_group: dict[str, tuple[int, float]]  # group id -> (size, entropy)
    weighted_mean: float


def group_entropy(pol: GeneratedPolicy, sm: SimilarityModel) -> EntropyReport:
    """Shannon entropy (nats) of cluster labels within each non-empty
    group, and the member-weighted mean across groups."""
    per_group: dict[str, tuple[int, float]] = {}
    total_members = 0
    acc = 0.0
    for g in range(pol.num_groups):
        members = np.nonzero(pol.ug[:, g])[0]
        if len(members) == 0:
            continue
        labels = [sm.cluster_of[sm.users[i]] for i in members]
        n = len(labels)
        ent = 0.0
        for lab in set(labels):
            p = labels.count(lab) / n
            ent -= p * math.log(p)
        per_group[f"group-{g:03d}"] = (n, ent)
        total_members += n
        acc += n * ent
    mean = acc / total_members if total_members else 0.0
    return EntropyReport(per_group=per_group, weighted_mean=mean)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    cuts_added: int
    satisfied_fraction: float
    objective: float | None
    feasible: bool
    entropy: float


@dataclass(frozen=True)
class GenerationTrace:
    rows: tuple[TraceRow, ...]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "cuts_added", "satisfied_fraction", "objective", "entropy"])
            for r in self.rows:
                w.writerow(
                    [
                        r.iteration,
                        r.cuts_added,
                        f"{r.satisfied_fraction:.6f}",
                        "" if r.objective is None else repr(r.objective),
                        f"{r.entropy:.6f}",
                    ]
                )


@dataclass(frozen=True)
class GenerationResult:
    result: SolveResult
    trace: GenerationTrace
    cuts: tuple[tuple[str, str], ...]
    converged: bool


def _strip_pair(pol: GeneratedPolicy, i: int, j: int) -> GeneratedPolicy:
    """Warm-start hint: evict the higher-index user from groups shared
    with its cut partner; the next solve re-homes it."""
    ug = pol.ug.copy()
    shared = ug[i] & ug[j]
    ug[j, shared] = False
    return GeneratedPolicy(num_groups=pol.num_groups, ug=ug, dad=pol.dad.copy())


def generate(
    inst: AccessInstance,
    scfg: SolveConfig,
    pcfg: PenaltyConfig,
    sm: SimilarityModel,
    *,
    batch_size: int = 50,
    max_iterations: int = 50,
) -> GenerationResult:
    """Alternate solving and cut generation until all co-resident pairs
    are within the similarity threshold.

    The satisfied fraction tracks the violations seen at iteration 1:
    one of those pairs counts as handled once it is cut or observed
    non-violating, and stays counted, so the fraction never decreases.
    Infeasibility after adding cuts ends the loop with the last feasible
    solution; initial infeasibility is returned as-is.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    cuts: list[tuple[str, str]] = []
    cut_set: set[tuple[int, int]] = set()
    base_excl = scfg.pair_exclusions

    def cfg_with_cuts(warm: GeneratedPolicy | None) -> SolveConfig:
        return replace(
            scfg,
            pair_exclusions=base_excl + tuple(cuts),
            warm_start=warm if warm is not None else scfg.warm_start,
        )

    res = solve(inst, cfg_with_cuts(None), pcfg, seed_clusters=sm.cluster_of)
    if res.status != STATUS_FEASIBLE:
        return GenerationResult(
            result=res, trace=GenerationTrace(rows=()), cuts=(), converged=False
        )

    uidx = inst.user_index
    initial: set[tuple[int, int]] | None = None
    ever_satisfied: set[tuple[int, int]] = set()
    rows: list[TraceRow] = []
    last_feasible = res
    converged = False

    for iteration in range(1, max_iterations + 1):
        viols = separate(inst, last_feasible.policy, sm)
        vpairs = {
            (min(uidx[v.u1], uidx[v.u2]), max(uidx[v.u1], uidx[v.u2])) for v in viols
        }
        if initial is None:
            initial = set(vpairs)
        ever_satisfied |= initial - vpairs
        if initial:
            handled = {p for p in initial if p in cut_set or p in ever_satisfied}
            frac = len(handled) / len(initial)
        else:
            frac = 1.0
        ent = group_entropy(last_feasible.policy, sm).weighted_mean

        if not viols:
            rows.append(
                TraceRow(iteration, 0, frac, last_feasible.objective, True, ent)
            )
            converged = True
            break

        batch = viols[:batch_size]
        new_pairs = [
            (min(uidx[v.u1], uidx[v.u2]), max(uidx[v.u1], uidx[v.u2])) for v in batch
        ]
        for v, p in zip(batch, new_pairs):
            cuts.append((v.u1, v.u2))
            cut_set.add(p)
        if initial:
            handled = {p for p in initial if p in cut_set or p in ever_satisfied}
            frac = len(handled) / len(initial)
        rows.append(
            TraceRow(iteration, len(batch), frac, last_feasible.objective, True, ent)
        )

        warm = last_feasible.policy
        for i, j in new_pairs:
            warm = _strip_pair(warm, i, j)
        nxt = solve(inst, cfg_with_cuts(warm), pcfg, seed_clusters=sm.cluster_of)
        if nxt.status != STATUS_FEASIBLE:
            log.info(
                "cut round %d made the instance %s; keeping last feasible solution",
                iteration,
                nxt.status,
            )
            rows.append(TraceRow(iteration + 1, 0, frac, None, False, ent))
            break
        last_feasible = nxt
    else:
        log.warning("generate: iteration cap %d reached with violations left", max_iterations)

    return GenerationResult(
        result=last_feasible,
        trace=GenerationTrace(rows=tuple(rows)),
        cuts=tuple(cuts),
        converged=converged,
    )
