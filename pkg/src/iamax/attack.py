"""Credential-compromise impact analysis.

Impact of compromising a user set is the number of distinct datastores
reachable through any of their access rows.  Impact is monotone and
submodular in the user set, so greedy selection of the worst-case set
carries the usual (1 - 1/e) guarantee; the average case is estimated by
sampling (or enumerated exactly when the subset count is small).

``evaluate_hardening`` compares a policy's effective-access matrix
against the pre-hardening grants: ratios below 1.0 mean a stolen
credential reaches less after hardening.
"""

from __future__ import annotations

import csv
import heapq
import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import AccessInstance, GeneratedPolicy, effective_access

log = logging.getLogger("iamax.attack")

EXACT_ENUM_LIMIT = 100_000  # enumerate all subsets up to this many


def _pack_rows(access: np.ndarray) -> list[int]:
    rows = []
    for r in np.asarray(access, dtype=bool):
        mask = 0
        for j in np.nonzero(r)[0]:
            mask |= 1 << int(j)
        rows.append(mask)
    return rows


def impact(access: np.ndarray, users: list[int]) -> int:
    """Distinct datastores reachable from the given user rows."""
    if not users:
        return 0
    return int(np.asarray(access, dtype=bool)[list(users)].any(axis=0).sum())


@dataclass(frozen=True)
class GreedyAttack:
    users: tuple[int, ...]
    impact: int
    marginal_gains: tuple[int, ...]


def greedy_attack(access: np.ndarray, k: int) -> GreedyAttack:
    """Worst-case attacker by lazy greedy selection.

    Ties break toward the lowest user index.  Because impact is monotone
    submodular, the result is within (1 - 1/e) of the best k-subset.
    """
    access = np.asarray(access, dtype=bool)
    n = access.shape[0]
    k = min(k, n)
    if k <= 0:
        return GreedyAttack(users=(), impact=0, marginal_gains=())
    rows = _pack_rows(access)
    covered = 0
    chosen: list[int] = []
    gains: list[int] = []
    # (negated stale gain, index); lazy re-evaluation pops until fresh
    heap = [(-r.bit_count(), i) for i, r in enumerate(rows)]
    heapq.heapify(heap)
    while len(chosen) < k and heap:
        neg, i = heapq.heappop(heap)
        fresh = (rows[i] & ~covered).bit_count()
        if -neg != fresh:
            heapq.heappush(heap, (-fresh, i))
            continue
        chosen.append(i)
        gains.append(fresh)
        covered |= rows[i]
    return GreedyAttack(users=tuple(chosen), impact=covered.bit_count(), marginal_gains=tuple(gains))


@dataclass(frozen=True)
class RandomAttackEstimate:
    mean: float
    stderr: float
    samples: int
    exact: bool


def random_attack(
    access: np.ndarray, k: int, *, samples: int = 10_000, seed: int = 0
) -> RandomAttackEstimate:
    """Expected impact of a uniformly random k-subset of users.

    When the number of k-subsets is at most ``EXACT_ENUM_LIMIT`` the
    expectation is enumerated exactly (stderr 0); otherwise it is a
    Monte-Carlo mean over ``samples`` draws.
    """
    access = np.asarray(access, dtype=bool)
    n = access.shape[0]
    if n == 0 or k <= 0:
        return RandomAttackEstimate(mean=0.0, stderr=0.0, samples=0, exact=True)
    k = min(k, n)
    rows = _pack_rows(access)
    n_subsets = math.comb(n, k)
    if n_subsets <= EXACT_ENUM_LIMIT:
        total = 0
        for combo in itertools.combinations(range(n), k):
            u = 0
            for i in combo:
                u |= rows[i]
            total += u.bit_count()
        return RandomAttackEstimate(
            mean=total / n_subsets, stderr=0.0, samples=n_subsets, exact=True
        )
    rng = np.random.default_rng(seed)
    vals = np.empty(samples, dtype=np.int64)
    for t in range(samples):
        u = 0
        for i in rng.choice(n, size=k, replace=False):
            u |= rows[int(i)]
        vals[t] = u.bit_count()
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    return RandomAttackEstimate(mean=mean, stderr=stderr, samples=samples, exact=False)


def filter_high_degree(
    access: np.ndarray, fraction: float = 0.3
) -> tuple[np.ndarray, np.ndarray]:
    """Drop the ceil(fraction * n) highest-degree rows (ties toward the
    lowest index).  Returns (kept row indices, removed row indices).

    Models platform hygiene catching the most privileged accounts, so
    worst-case analysis focuses on less conspicuous credentials."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must be in [0, 1)")
    access = np.asarray(access, dtype=bool)
    n = access.shape[0]
    m = math.ceil(fraction * n)
    degrees = access.sum(axis=1)
    order = sorted(range(n), key=lambda i: (-int(degrees[i]), i))
    removed = sorted(order[:m])
    kept = sorted(set(range(n)) - set(removed))
    return np.array(kept, dtype=int), np.array(removed, dtype=int)


@dataclass(frozen=True)
class HardeningRow:
    k: int
    mode: str
    baseline_impact: float
    hardened_impact: float
    ratio: float | None


def evaluate_hardening(
    inst: AccessInstance,
    pol: GeneratedPolicy,
    ks: list[int],
    mode: str,
    *,
    samples: int = 10_000,
    seed: int = 0,
    filter_fraction: float = 0.3,
) -> list[HardeningRow]:
    """Impact before vs after hardening for each attack size k.

    ``mode`` is ``random`` (expected impact of random credential theft)
    or ``worst`` (greedy worst-case after removing the top
    ``filter_fraction`` of users by granted degree; the removal set is
    computed once, on the baseline grants, and applied to both matrices
    so the comparison covers the same population).
    """
    if mode not in ("random", "worst"):
        raise ValueError(f"unknown attack mode {mode!r}")
    baseline = inst.ud_hat
    hardened = effective_access(inst, pol)
    if mode == "worst":
        kept, removed = filter_high_degree(baseline, filter_fraction)
        log.debug("worst-case filter removed %d users", len(removed))
        baseline = baseline[kept]
        hardened = hardened[kept]
    out: list[HardeningRow] = []
    for k in ks:
        if mode == "worst":
            b = float(greedy_attack(baseline, k).impact)
            h = float(greedy_attack(hardened, k).impact)
        else:
            b = random_attack(baseline, k, samples=samples, seed=seed).mean
            h = random_attack(hardened, k, samples=samples, seed=seed).mean
        ratio = (h / b) if b > 0 else None
        out.append(
            HardeningRow(k=k, mode=mode, baseline_impact=b, hardened_impact=h, ratio=ratio)
        )
    return out


def hardening_rows_to_csv(rows: list[HardeningRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "mode", "baseline_impact", "hardened_impact", "ratio"])
        for r in rows:
            w.writerow(
                [
                    r.k,
                    r.mode,
                    repr(r.baseline_impact),
                    repr(r.hardened_impact),
                    "" if r.ratio is None else repr(r.ratio),
                ]
            )
