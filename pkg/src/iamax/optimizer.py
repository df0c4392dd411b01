"""Dormant-permission minimization.

Given an :class:`~iamax.model.AccessInstance`, synthesize a
:class:`~iamax.model.GeneratedPolicy` over a fixed number of groups that
keeps every observed access reachable while shedding as much
granted-but-unused access as possible.

Hard constraints on a candidate policy:

(a) access preservation: every observed access stays effective;
(b) data-type safety: a user's effective access may not touch a data
    type the user never touched before;
(c) pair exclusions: excluded user pairs never share a group.

The score of a feasible policy is::

    (total granted cells - total effective cells) - sum_u psi_u
    v_u   = effective_u - (1 + epsilon) * observed_u
    psi_u = max(v_u, gamma * v_u)        (optionally clamped at zero)

``solve`` runs an anytime two-phase search: seed group memberships from
row/similarity clusters (plus systematic enumeration when the membership
space is small), derive grants greedily, then steepest-ascent local
search over membership reassignments, grant edits, swaps, and merges,
with random restarts under a deadline.  ``brute_force_solve`` is an
independent exhaustive reference for tiny inputs, used to validate the
search; it shares only the objective formula with ``solve``.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .model import AccessInstance, GeneratedPolicy, dormant_count, effective_access

log = logging.getLogger("iamax.optimizer")

STATUS_FEASIBLE = "feasible"
STATUS_INFEASIBLE = "infeasible"
STATUS_TIMEOUT = "timeout_no_solution"

# Local-search gates: keep candidate enumeration tractable on larger inputs.
_ALL_PATTERN_LIMIT = 64          # enumerate every membership subset per user
_SYSTEMATIC_SEED_LIMIT = 4096    # enumerate every membership matrix
_REGRANT_TRIALS_LIMIT = 1024     # per-datastore grant-set enumeration budget
_SWAP_TRIALS_LIMIT = 20000
_MERGE_GROUP_LIMIT = 16
_IMPROVE_EPS = 1e-9


@dataclass(frozen=True)
class PenaltyConfig:
    """Objective shape: over-grant slack tolerance and penalty slope."""

    epsilon: float = 0.15
    gamma: float = 2.0
    clamp_penalty_at_zero: bool = False

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")


@dataclass(frozen=True)
class SolveConfig:
    num_groups: int
    time_limit: float = 900.0
    seed: int = 0
    restarts: int = 24
    pair_exclusions: tuple[tuple[str, str], ...] = ()
    warm_start: GeneratedPolicy | None = None

    def __post_init__(self) -> None:
        if self.num_groups < 1:
            raise ValueError("num_groups must be >= 1")
        if self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass(frozen=True)
class ObjectiveBreakdown:
    total: float
    eff_total: int
    per_user_slack: np.ndarray    # v_u
    per_user_penalty: np.ndarray  # psi_u


@dataclass(frozen=True)
class FeasibilityReport:
    ok: bool
    access_gaps: tuple[tuple[str, str], ...]
    type_violations: tuple[tuple[str, str], ...]
    exclusion_violations: tuple[tuple[str, str, int], ...]


@dataclass(frozen=True)
class SolveResult:
    status: str
    policy: GeneratedPolicy | None
    objective: float | None
    dormant_remaining: int | None
    dormant_baseline: int
    per_user_dormant: np.ndarray | None
    per_user_slack: np.ndarray | None
    per_user_penalty: np.ndarray | None
    wall_time: float
    restarts_used: int
    incumbent_history: tuple[tuple[float, float], ...]

    def to_json_obj(self, inst: AccessInstance) -> dict:
        obj: dict = {
            "status": self.status,
            "objective": self.objective,
            "dormant_remaining": self.dormant_remaining,
            "dormant_baseline": self.dormant_baseline,
            "wall_time": self.wall_time,
            "restarts_used": self.restarts_used,
            "incumbent_history": [[t, o] for t, o in self.incumbent_history],
        }
        if self.policy is not None:
            pol = self.policy
            obj["num_groups"] = pol.num_groups
            obj["memberships"] = {
                pol.group_id(g): [inst.users[i] for i in np.nonzero(pol.ug[:, g])[0]]
                for g in range(pol.num_groups)
            }
            obj["grants"] = {
                pol.group_id(g): [inst.datastores[j] for j in np.nonzero(pol.dad[g])[0]]
                for g in range(pol.num_groups)
            }
            obj["per_user"] = {
                u: {
                    "dormant": int(self.per_user_dormant[i]),
                    "slack": float(self.per_user_slack[i]),
                    "penalty": float(self.per_user_penalty[i]),
                }
                for i, u in enumerate(inst.users)
            }
        return obj


def _psi(v: float, gamma: float, clamp: bool) -> float:
    p = v if v >= gamma * v else gamma * v
    if clamp and p < 0.0:
        p = 0.0
    return p


def _objective_from_sums(
    hat_total: int, s: list[int], n: list[int], pcfg: PenaltyConfig
) -> float:
    """Canonical objective accumulation.

    Both the search and the exhaustive reference call this with plain
    ints in user-index order, so equal solutions score bitwise-equal.
    """
    one_plus_eps = 1.0 + pcfg.epsilon
    eff_total = 0
    psi_total = 0.0
    for s_u, n_u in zip(s, n):
        eff_total += s_u
        psi_total += _psi(s_u - one_plus_eps * n_u, pcfg.gamma, pcfg.clamp_penalty_at_zero)
    return float(hat_total - eff_total) - psi_total


def objective(
    inst: AccessInstance, pol: GeneratedPolicy, pcfg: PenaltyConfig = PenaltyConfig()
) -> ObjectiveBreakdown:
    """Score a policy (feasible or not) and report per-user terms."""
    eff = effective_access(inst, pol)
    s = eff.sum(axis=1).astype(np.int64)
    n = inst.ud.sum(axis=1).astype(np.int64)
    one_plus_eps = 1.0 + pcfg.epsilon
    slack = np.array([float(si) - one_plus_eps * float(ni) for si, ni in zip(s, n)])
    pen = np.array(
        [_psi(v, pcfg.gamma, pcfg.clamp_penalty_at_zero) for v in slack]
    )
    total = _objective_from_sums(int(inst.ud_hat.sum()), s.tolist(), n.tolist(), pcfg)
    return ObjectiveBreakdown(
        total=total, eff_total=int(s.sum()), per_user_slack=slack, per_user_penalty=pen
    )


def _resolve_exclusions(
    inst: AccessInstance, pairs: tuple[tuple[str, str], ...]
) -> list[tuple[int, int]]:
    out = []
    for a, b in pairs:
        if a not in inst.user_index or b not in inst.user_index:
            raise ValueError(f"exclusion references unknown user: ({a!r}, {b!r})")
        if a == b:
            raise ValueError(f"exclusion pairs a user with itself: {a!r}")
        i, j = inst.user_index[a], inst.user_index[b]
        out.append((min(i, j), max(i, j)))
    return sorted(set(out))


def check_feasible(
    inst: AccessInstance,
    pol: GeneratedPolicy,
    pair_exclusions: tuple[tuple[str, str], ...] = (),
) -> FeasibilityReport:
    """Check the three hard constraints directly from their definitions.

    The data-type check compares type profiles (observed vs effective),
    independently of the forbidden-cell form the optimizer uses.
    """
    eff = effective_access(inst, pol)
    gaps = [
        (inst.users[i], inst.datastores[j])
        for i, j in zip(*np.nonzero(inst.ud & ~eff))
    ]
    dt_i = inst.dt.astype(np.int16)
    allowed = (inst.ud.astype(np.int16) @ dt_i) > 0
    got = (eff.astype(np.int16) @ dt_i) > 0
    tviol = [
        (inst.users[i], inst.data_types[t])
        for i, t in zip(*np.nonzero(got & ~allowed))
    ]
    excl = _resolve_exclusions(inst, pair_exclusions)
    eviol = []
    for i, j in excl:
        shared = np.nonzero(pol.ug[i] & pol.ug[j])[0]
        for g in shared:
            eviol.append((inst.users[i], inst.users[j], int(g)))
    return FeasibilityReport(
        ok=not (gaps or tviol or eviol),
        access_gaps=tuple(gaps),
        type_violations=tuple(tviol),
        exclusion_violations=tuple(eviol),
    )


# ---------------------------------------------------------------------------
# Exhaustive reference


def brute_force_solve(
    inst: AccessInstance,
    num_groups: int,
    pcfg: PenaltyConfig = PenaltyConfig(),
    pair_exclusions: tuple[tuple[str, str], ...] = (),
) -> SolveResult:
    """Enumerate every (membership, grant) pair on bitmasks.

    Requires ``(|U| + |D|) * num_groups <= 24``.  Ties are broken by
    enumeration order: grant tables outer (ascending code), memberships
    inner, first optimum kept.  Used as a ground-truth oracle in tests;
    shares only the objective accumulation with ``solve``.
    """
    t0 = time.monotonic()
    nu, nd, ng = inst.n_users, inst.n_datastores, num_groups
    if (nu + nd) * ng > 24:
        raise ValueError("instance too large for exhaustive enumeration")
    excl = _resolve_exclusions(inst, pair_exclusions)

    need = [0] * nu
    hat = [0] * nu
    forb = [0] * nu
    allowed_types = [0] * nu
    dtype_mask = [0] * nd  # per datastore: bitmask of its data types
    for j in range(nd):
        for t in range(len(inst.data_types)):
            if inst.dt[j, t]:
                dtype_mask[j] |= 1 << t
    for i in range(nu):
        for j in range(nd):
            if inst.ud[i, j]:
                need[i] |= 1 << j
                allowed_types[i] |= dtype_mask[j]
            if inst.ud_hat[i, j]:
                hat[i] |= 1 << j
    for i in range(nu):
        for j in range(nd):
            if inst.ud_hat[i, j] and (dtype_mask[j] & ~allowed_types[i]):
                forb[i] |= 1 << j

    gmask = (1 << ng) - 1
    dmask = (1 << nd) - 1
    n_list = [need[i].bit_count() for i in range(nu)]
    hat_total = sum(h.bit_count() for h in hat)

    # Valid membership matrices: decoded per-user group sets, exclusions held.
    ug_codes: list[tuple[int, ...]] = []
    for code in range(1 << (nu * ng)):
        pats = tuple((code >> (u * ng)) & gmask for u in range(nu))
        if any(pats[a] & pats[b] for a, b in excl):
            continue
        ug_codes.append(pats)

    best_obj = -math.inf
    best: tuple[tuple[int, ...], list[int]] | None = None
    grants = [0] * (1 << ng)
    lowbit_group = {1 << g: g for g in range(ng)}
    for dad_code in range(1 << (ng * nd)):
        rows = [(dad_code >> (g * nd)) & dmask for g in range(ng)]
        for p in range(1, 1 << ng):
            low = p & -p
            grants[p] = grants[p & (p - 1)] | rows[lowbit_group[low]]
        for pats in ug_codes:
            s: list[int] = []
            ok = True
            for u in range(nu):
                eff = grants[pats[u]] & hat[u] if pats[u] else 0
                if (need[u] & ~eff) or (eff & forb[u]):
                    ok = False
                    break
                s.append(eff.bit_count())
            if not ok:
                continue
            obj = _objective_from_sums(hat_total, s, n_list, pcfg)
            if obj > best_obj:
                best_obj = obj
                best = (pats, rows)

    if best is None:
        return SolveResult(
            status=STATUS_INFEASIBLE,
            policy=None,
            objective=None,
            dormant_remaining=None,
            dormant_baseline=int((inst.ud_hat & ~inst.ud).sum()),
            per_user_dormant=None,
            per_user_slack=None,
            per_user_penalty=None,
            wall_time=time.monotonic() - t0,
            restarts_used=0,
            incumbent_history=(),
        )
    pats, rows = best
    ug = np.zeros((nu, ng), dtype=bool)
    dad = np.zeros((ng, nd), dtype=bool)
    for u in range(nu):
        for g in range(ng):
            ug[u, g] = bool(pats[u] >> g & 1)
    for g in range(ng):
        for j in range(nd):
            dad[g, j] = bool(rows[g] >> j & 1)
    pol = GeneratedPolicy(num_groups=ng, ug=ug, dad=dad)
    return _result_from_policy(inst, pol, pcfg, t0, 0, ((0.0, best_obj),))


def _result_from_policy(
    inst: AccessInstance,
    pol: GeneratedPolicy,
    pcfg: PenaltyConfig,
    t0: float,
    restarts_used: int,
    history: tuple[tuple[float, float], ...],
) -> SolveResult:
    brk = objective(inst, pol, pcfg)
    rep = dormant_count(inst, pol)
    return SolveResult(
        status=STATUS_FEASIBLE,
        policy=pol,
        objective=brk.total,
        dormant_remaining=rep.remaining_total,
        dormant_baseline=rep.baseline_total,
        per_user_dormant=rep.per_user,
        per_user_slack=brk.per_user_slack,
        per_user_penalty=brk.per_user_penalty,
        wall_time=time.monotonic() - t0,
        restarts_used=restarts_used,
        incumbent_history=history,
    )


# ---------------------------------------------------------------------------
# Search internals


class _Ctx:
    def __init__(
        self,
        inst: AccessInstance,
        ng: int,
        pcfg: PenaltyConfig,
        excl: list[tuple[int, int]],
    ) -> None:
        self.inst = inst
        self.ng = ng
        self.pcfg = pcfg
        self.nu = inst.n_users
        self.nd = inst.n_datastores
        self.need = inst.ud
        self.hat = inst.ud_hat
        dt_i = inst.dt.astype(np.int16)
        allowed = (inst.ud.astype(np.int16) @ dt_i) > 0
        # Cells whose grant would expose a new data type to the user.
        self.forbidden = (((~allowed).astype(np.int16) @ dt_i.T) > 0) & inst.ud_hat
        self.excl_mask = np.zeros((self.nu, self.nu), dtype=bool)
        for i, j in excl:
            self.excl_mask[i, j] = True
            self.excl_mask[j, i] = True
        self.has_excl = bool(excl)
        self.excl = excl
        self.n_list = inst.ud.sum(axis=1).astype(np.int64).tolist()
        self.hat_total = int(inst.ud_hat.sum())
        self.needers = [int(i) for i in np.nonzero(inst.ud.any(axis=1))[0]]


class _State:
    __slots__ = ("ug", "dad", "cover", "s")

    def __init__(self, ctx: _Ctx) -> None:
        self.ug = np.zeros((ctx.nu, ctx.ng), dtype=bool)
        self.dad = np.zeros((ctx.ng, ctx.nd), dtype=bool)
        self.cover = np.zeros((ctx.nu, ctx.nd), dtype=np.int16)
        self.s = np.zeros(ctx.nu, dtype=np.int64)

    def snapshot(self):
        return (self.ug.copy(), self.dad.copy(), self.cover.copy(), self.s.copy())

    def restore(self, snap) -> None:
        np.copyto(self.ug, snap[0])
        np.copyto(self.dad, snap[1])
        np.copyto(self.cover, snap[2])
        np.copyto(self.s, snap[3])


def _refresh_s(ctx: _Ctx, st: _State, users) -> None:
    for u in users:
        st.s[u] = int(((st.cover[u] > 0) & ctx.hat[u]).sum())


def _state_obj(ctx: _Ctx, st: _State) -> float:
    return _objective_from_sums(ctx.hat_total, st.s.tolist(), ctx.n_list, ctx.pcfg)


def _state_feasible(ctx: _Ctx, st: _State) -> bool:
    eff = (st.cover > 0) & ctx.hat
    if (ctx.need & ~eff).any():
        return False
    if (eff & ctx.forbidden).any():
        return False
    for i, j in ctx.excl:
        if (st.ug[i] & st.ug[j]).any():
            return False
    return True


def _members(st: _State, g: int) -> np.ndarray:
    return np.nonzero(st.ug[:, g])[0]


def _set_membership(ctx: _Ctx, st: _State, u: int, groups: tuple[int, ...]) -> None:
    old = np.nonzero(st.ug[u])[0]
    for g in old:
        st.cover[u] -= st.dad[g]
    st.ug[u] = False
    for g in groups:
        st.ug[u, g] = True
        st.cover[u] += st.dad[g]


def _grant_cells(ctx: _Ctx, st: _State, g: int, cells: np.ndarray) -> None:
    """Set dad[g, cells] for cells currently unset; update member cover."""
    add = cells & ~st.dad[g]
    if not add.any():
        return
    st.dad[g] |= add
    m = _members(st, g)
    if len(m):
        st.cover[np.ix_(m, np.nonzero(add)[0])] += 1


def _clear_cells(ctx: _Ctx, st: _State, g: int, cells: np.ndarray) -> None:
    rem = cells & st.dad[g]
    if not rem.any():
        return
    st.dad[g] &= ~rem
    m = _members(st, g)
    if len(m):
        st.cover[np.ix_(m, np.nonzero(rem)[0])] -= 1


def _clear_sweep(ctx: _Ctx, st: _State) -> None:
    """Drop grants no member relies on, one group at a time in index
    order so joint reliance across groups is respected."""
    for g in range(ctx.ng):
        if not st.dad[g].any():
            continue
        m = _members(st, g)
        if len(m) == 0:
            _clear_cells(ctx, st, g, st.dad[g].copy())
            continue
        rely = (ctx.need[m] & (st.cover[m] == 1)).any(axis=0)
        clearable = st.dad[g] & ~rely
        if clearable.any():
            _clear_cells(ctx, st, g, clearable)
            _refresh_s(ctx, st, m.tolist())


def _apply_pattern(ctx: _Ctx, st: _State, u: int, pattern: tuple[int, ...]) -> bool:
    """Reassign user u's memberships to `pattern`, extending the lowest
    pattern group with whatever grants u's observed accesses still need."""
    need_u = ctx.need[u]
    if not pattern:
        if need_u.any():
            return False
        _set_membership(ctx, st, u, pattern)
        _refresh_s(ctx, st, [u])
        return True
    if ctx.has_excl:
        for g in pattern:
            m = _members(st, g)
            if len(m) and ctx.excl_mask[u, m].any():
                return False
    grants = np.zeros(ctx.nd, dtype=bool)
    for g in pattern:
        grants |= st.dad[g]
    ext = need_u & ~grants
    g_star = pattern[0]
    touched = {u}
    if ext.any():
        m_star = _members(st, g_star)
        others = m_star[m_star != u]
        if len(others) and ctx.forbidden[np.ix_(others, np.nonzero(ext)[0])].any():
            return False
        touched.update(int(x) for x in m_star)
    if ((grants | ext) & ctx.forbidden[u]).any():
        return False
    _set_membership(ctx, st, u, pattern)
    if ext.any():
        _grant_cells(ctx, st, g_star, ext)
        touched.update(int(x) for x in _members(st, g_star))
    _refresh_s(ctx, st, sorted(touched))
    return True


def _apply_clear(ctx: _Ctx, st: _State, g: int, d: int) -> bool:
    if not st.dad[g, d]:
        return False
    m = _members(st, g)
    if len(m) and (ctx.need[m, d] & (st.cover[m, d] == 1)).any():
        return False
    cells = np.zeros(ctx.nd, dtype=bool)
    cells[d] = True
    _clear_cells(ctx, st, g, cells)
    _refresh_s(ctx, st, m.tolist())
    return True


def _apply_swap(ctx: _Ctx, st: _State, d: int, g_from: int, g_to: int) -> bool:
    if not st.dad[g_from, d] or st.dad[g_to, d]:
        return False
    m_to = _members(st, g_to)
    if len(m_to) and ctx.forbidden[m_to, d].any():
        return False
    cells = np.zeros(ctx.nd, dtype=bool)
    cells[d] = True
    _grant_cells(ctx, st, g_to, cells)
    m_from = _members(st, g_from)
    if not (len(m_from) and (ctx.need[m_from, d] & (st.cover[m_from, d] == 1)).any()):
        _clear_cells(ctx, st, g_from, cells)
    _refresh_s(ctx, st, sorted(set(m_to.tolist()) | set(m_from.tolist())))
    return True


def _apply_regrant(ctx: _Ctx, st: _State, d: int, groups: tuple[int, ...]) -> bool:
    """Replace column d of the grant table with exactly `groups`."""
    gvec = np.zeros(ctx.ng, dtype=bool)
    for g in groups:
        gvec[g] = True
    if np.array_equal(gvec, st.dad[:, d]):
        return False
    for g in groups:
        m = _members(st, g)
        if len(m) and ctx.forbidden[m, d].any():
            return False
    new_cover = st.ug[:, gvec].sum(axis=1).astype(np.int16) if gvec.any() else np.zeros(ctx.nu, dtype=np.int16)
    if (ctx.need[:, d] & (new_cover == 0)).any():
        return False
    st.dad[:, d] = gvec
    changed = np.nonzero(st.cover[:, d] != new_cover)[0]
    st.cover[:, d] = new_cover
    _refresh_s(ctx, st, changed.tolist())
    return True


def _apply_merge(ctx: _Ctx, st: _State, src: int, dst: int) -> bool:
    moved = _members(st, src)
    if len(moved) == 0:
        return False
    m_dst = _members(st, dst)
    after = np.union1d(moved, m_dst)
    if ctx.has_excl and ctx.excl_mask[np.ix_(after, after)].any():
        return False
    ext = ctx.need[after].any(axis=0) & ~st.dad[dst]
    col = st.dad[dst] | ext
    if ctx.forbidden[np.ix_(after, np.nonzero(col)[0])].any():
        return False
    for u in moved:
        cur = np.nonzero(st.ug[u])[0]
        newpat = tuple(g for g in cur if g != src)
        if dst not in newpat:
            newpat = tuple(sorted(newpat + (dst,)))
        _set_membership(ctx, st, int(u), newpat)
    _clear_cells(ctx, st, src, st.dad[src].copy())
    _grant_cells(ctx, st, dst, ext)
    _refresh_s(ctx, st, sorted(set(int(x) for x in after)))
    return True


def _enumerate_moves(ctx: _Ctx, st: _State) -> list:
    """Candidate move closures in deterministic scan order (users by
    index, then grant edits by group/datastore index)."""
    moves = []
    ng = ctx.ng
    all_patterns = (1 << ng) <= _ALL_PATTERN_LIMIT
    for u in range(ctx.nu):
        cur = tuple(int(g) for g in np.nonzero(st.ug[u])[0])
        if all_patterns:
            cand = [
                tuple(c)
                for r in range(0, ng + 1)
                for c in itertools.combinations(range(ng), r)
            ]
        else:
            cand = [()] if not ctx.need[u].any() else []
            cand += [(g,) for g in range(ng)]
            cur_set = set(cur)
            for g in range(ng):
                if g in cur_set:
                    if len(cur) > 1:
                        cand.append(tuple(x for x in cur if x != g))
                else:
                    cand.append(tuple(sorted(cur + (g,))))
        for pat in cand:
            if pat != cur:
                moves.append((lambda s, u=u, p=pat: _apply_pattern(ctx, s, u, p)))
    for g in range(ng):
        for d in np.nonzero(st.dad[g])[0]:
            moves.append(lambda s, g=g, d=int(d): _apply_clear(ctx, s, g, d))
    if (1 << ng) * ctx.nd <= _REGRANT_TRIALS_LIMIT:
        for d in range(ctx.nd):
            for r in range(ng + 1):
                for c in itertools.combinations(range(ng), r):
                    moves.append(lambda s, d=d, c=c: _apply_regrant(ctx, s, d, c))
    elif ng * ng * ctx.nd <= _SWAP_TRIALS_LIMIT:
        for d in range(ctx.nd):
            granting = np.nonzero(st.dad[:, d])[0]
            for gf in granting:
                for gt in range(ng):
                    if not st.dad[gt, d]:
                        moves.append(
                            lambda s, d=d, gf=int(gf), gt=gt: _apply_swap(ctx, s, d, gf, gt)
                        )
    if ng <= _MERGE_GROUP_LIMIT:
        for src in range(ng):
            if not st.ug[:, src].any():
                continue
            for dst in range(ng):
                if src != dst:
                    moves.append(lambda s, a=src, b=dst: _apply_merge(ctx, s, a, b))
    return moves


def _ascend(ctx: _Ctx, st: _State, deadline: float) -> float:
    """Steepest-ascent over trial-applied moves; every trial includes a
    clear sweep so reclaimed grants count toward the move's value."""
    obj = _state_obj(ctx, st)
    while True:
        if time.monotonic() >= deadline:
            return obj
        moves = _enumerate_moves(ctx, st)
        best_delta = _IMPROVE_EPS
        best_fn = None
        for idx, fn in enumerate(moves):
            if idx % 64 == 0 and time.monotonic() >= deadline:
                break
            snap = st.snapshot()
            if fn(st):
                _clear_sweep(ctx, st)
                delta = _state_obj(ctx, st) - obj
                if delta > best_delta:
                    best_delta = delta
                    best_fn = fn
            st.restore(snap)
        if best_fn is None:
            return obj
        best_fn(st)
        _clear_sweep(ctx, st)
        obj = _state_obj(ctx, st)


def _greedy_cover(ctx: _Ctx, st: _State) -> tuple[bool, int]:
    """Derive grants for the current memberships: cover every observed
    access through some group whose members all tolerate the datastore.
    Returns (ok, blocking user index)."""
    for d in range(ctx.nd):
        needers = np.nonzero(ctx.need[:, d])[0]
        for u in needers:
            if st.cover[u, d] > 0:
                continue
            best_g = -1
            best_gain = -1
            for g in np.nonzero(st.ug[u])[0]:
                m = _members(st, g)
                if ctx.forbidden[m, d].any():
                    continue
                gain = int((ctx.need[m, d] & (st.cover[m, d] == 0)).sum())
                if gain > best_gain:
                    best_gain = gain
                    best_g = int(g)
            if best_g < 0:
                return False, int(u)
            cells = np.zeros(ctx.nd, dtype=bool)
            cells[d] = True
            _grant_cells(ctx, st, best_g, cells)
    _refresh_s(ctx, st, range(ctx.nu))
    return True, -1


def _build_state(ctx: _Ctx, ug: np.ndarray, relocate: bool = True) -> _State | None:
    """Build a feasible state from a membership matrix, or None.

    With ``relocate`` a user whose accesses cannot be covered is retried
    in a currently-empty group; without it the membership matrix is
    taken literally (used when enumerating the membership space)."""
    st = _State(ctx)
    st.ug[...] = ug
    for i, j in ctx.excl:
        shared = st.ug[i] & st.ug[j]
        if shared.any():
            if not relocate:
                return None
            st.ug[j, shared] = False
    for _ in range(ctx.ng + 1):
        st.dad[...] = False
        st.cover[...] = 0
        # users with observed accesses need at least one group
        homeless = np.nonzero(ctx.need.any(axis=1) & ~st.ug.any(axis=1))[0]
        for u in homeless:
            if not relocate:
                return None
            e = _first_empty_group(ctx, st, int(u))
            if e < 0:
                return None
            st.ug[u, e] = True
        ok, blocker = _greedy_cover(ctx, st)
        if ok:
            if not _state_feasible(ctx, st):
                return None
            return st
        if not relocate:
            return None
        e = _first_empty_group(ctx, st, blocker)
        if e < 0:
            return None
        st.ug[blocker] = False
        st.ug[blocker, e] = True
    return None


def _first_empty_group(ctx: _Ctx, st: _State, u: int) -> int:
    # an empty group has no co-residents, so exclusions cannot trip
    for g in range(ctx.ng):
        if not st.ug[:, g].any():
            return g
    return -1


def _cluster_ug(ctx: _Ctx, labels: list[int]) -> np.ndarray:
    """One group per cluster label, folded modulo the group budget."""
    uniq = sorted(set(labels))
    gmap = {lab: i % ctx.ng for i, lab in enumerate(uniq)}
    ug = np.zeros((ctx.nu, ctx.ng), dtype=bool)
    for u, lab in enumerate(labels):
        ug[u, gmap[lab]] = True
    return ug


def _row_cluster_labels(ctx: _Ctx) -> list[int]:
    key_to_lab: dict[bytes, int] = {}
    labels = []
    for u in range(ctx.nu):
        k = ctx.need[u].tobytes()
        if k not in key_to_lab:
            key_to_lab[k] = len(key_to_lab)
        labels.append(key_to_lab[k])
    return labels


def _warm_state(ctx: _Ctx, warm: GeneratedPolicy) -> _State | None:
    if warm.ug.shape[0] != ctx.nu or warm.dad.shape[1] != ctx.nd:
        raise ValueError("warm start shape does not match instance")
    if warm.num_groups > ctx.ng:
        return None
    st = _State(ctx)
    st.ug[:, : warm.num_groups] = warm.ug
    st.dad[: warm.num_groups] = warm.dad
    for i, j in ctx.excl:
        shared = st.ug[i] & st.ug[j]
        if shared.any():
            st.ug[j, shared] = False
    # forbidden grants: clear where droppable, otherwise rebuild grants
    st.cover[...] = (st.ug.astype(np.int16) @ st.dad.astype(np.int16))
    _refresh_s(ctx, st, range(ctx.nu))
    bad = ((st.cover > 0) & ctx.forbidden)
    if bad.any():
        for g in range(ctx.ng):
            m = _members(st, g)
            if not len(m):
                continue
            offending = st.dad[g] & ctx.forbidden[m].any(axis=0)
            if offending.any():
                _clear_cells(ctx, st, g, offending)
        _refresh_s(ctx, st, range(ctx.nu))
    ok, _ = _greedy_cover(ctx, st)
    if not ok or not _state_feasible(ctx, st):
        return _build_state(ctx, st.ug)
    return st


def _conflict_clique_exceeds(ctx: _Ctx) -> bool:
    """Sound infeasibility witness: users that pairwise can never share
    any group (excluded, or each one's observed stores all expose a new
    type to the other) each need their own group."""
    nodes = ctx.needers
    if not nodes:
        return False
    k = len(nodes)
    conflict = np.zeros((k, k), dtype=bool)
    for a in range(k):
        for b in range(a + 1, k):
            i, j = nodes[a], nodes[b]
            if ctx.excl_mask[i, j]:
                conflict[a, b] = conflict[b, a] = True
                continue
            ij = bool((ctx.need[i] & ~ctx.forbidden[j]).any())
            ji = bool((ctx.need[j] & ~ctx.forbidden[i]).any())
            if not ij and not ji:
                conflict[a, b] = conflict[b, a] = True
    deg_order = sorted(range(k), key=lambda a: (-int(conflict[a].sum()), a))
    best = 0
    for start in deg_order[: min(8, k)]:
        clique = [start]
        for a in deg_order:
            if a != start and all(conflict[a, c] for c in clique):
                clique.append(a)
        best = max(best, len(clique))
    return best > ctx.ng


def solve(
    inst: AccessInstance,
    scfg: SolveConfig,
    pcfg: PenaltyConfig = PenaltyConfig(),
    seed_clusters: dict[str, int] | None = None,
) -> SolveResult:
    """Anytime search for a high-scoring feasible policy.

    Deterministic for a fixed seed whenever the restart budget completes
    within the time limit.  Returns status ``infeasible`` only with a
    proof (conflict clique over the group budget, or exhaustive
    membership enumeration when the space is small enough); otherwise a
    fruitless run reports ``timeout_no_solution``.
    """
    t0 = time.monotonic()
    deadline = t0 + scfg.time_limit
    excl = _resolve_exclusions(inst, scfg.pair_exclusions)
    ctx = _Ctx(inst, scfg.num_groups, pcfg, excl)
    rng = np.random.default_rng(scfg.seed)

    best_obj = -math.inf
    best_pol: GeneratedPolicy | None = None
    history: list[tuple[float, float]] = []
    restarts_used = 0
    systematic_complete = False
    systematic_any_feasible = False

    def consider(st: _State) -> None:
        nonlocal best_obj, best_pol
        obj = _state_obj(ctx, st)
        if obj > best_obj:
            best_obj = obj
            best_pol = GeneratedPolicy(
                num_groups=ctx.ng, ug=st.ug.copy(), dad=st.dad.copy()
            )
            history.append((time.monotonic() - t0, obj))

    seeds: list[tuple[str, object]] = []
    if scfg.warm_start is not None:
        seeds.append(("warm", scfg.warm_start))
    seeds.append(("rows", _row_cluster_labels(ctx)))
    if seed_clusters is not None:
        labels = [seed_clusters.get(u, -1) for u in inst.users]
        if any(l >= 0 for l in labels):
            seeds.append(("clusters", labels))

    space = ctx.nu * ctx.ng
    systematic_codes: list[int] = []
    if space <= 22 and (1 << space) <= _SYSTEMATIC_SEED_LIMIT:
        systematic_codes = list(range(1 << space))

    seen: set[bytes] = set()
    budget = scfg.restarts

    def run_seed(ug: np.ndarray, relocate: bool) -> bool:
        nonlocal restarts_used
        restarts_used += 1  # every attempt consumes budget, even dead seeds
        st = _build_state(ctx, ug, relocate=relocate)
        if st is None:
            return False
        key = st.ug.tobytes()
        if key in seen:
            return True
        seen.add(key)
        _ascend(ctx, st, deadline)
        consider(st)
        return True

    for kind, payload in seeds:
        if time.monotonic() >= deadline:
            break
        if kind == "warm":
            st = _warm_state(ctx, payload)  # type: ignore[arg-type]
            if st is not None:
                restarts_used += 1
                seen.add(st.ug.tobytes())
                consider(st)  # warm incumbent before any search
                _ascend(ctx, st, deadline)
                consider(st)
        else:
            run_seed(_cluster_ug(ctx, payload), relocate=True)  # type: ignore[arg-type]

    if systematic_codes:
        gmask = (1 << ctx.ng) - 1
        done = 0
        for code in systematic_codes:
            if time.monotonic() >= deadline:
                break
            ug = np.zeros((ctx.nu, ctx.ng), dtype=bool)
            valid = True
            for u in range(ctx.nu):
                pat = (code >> (u * ctx.ng)) & gmask
                if pat == 0 and ctx.need[u].any():
                    valid = False
                    break
                for g in range(ctx.ng):
                    ug[u, g] = bool(pat >> g & 1)
            done += 1
            if not valid:
                continue
            if any((ug[i] & ug[j]).any() for i, j in ctx.excl):
                continue
            st = _build_state(ctx, ug, relocate=False)
            if st is None:
                continue
            systematic_any_feasible = True
            key = st.ug.tobytes()
            if key in seen:
                continue
            seen.add(key)
            restarts_used += 1
            _ascend(ctx, st, deadline)
            consider(st)
        systematic_complete = done == len(systematic_codes)

    while restarts_used < budget and time.monotonic() < deadline:
        assign = rng.integers(ctx.ng, size=ctx.nu)
        ug = np.zeros((ctx.nu, ctx.ng), dtype=bool)
        ug[np.arange(ctx.nu), assign] = True
        run_seed(ug, relocate=True)

    wall = time.monotonic() - t0
    if best_pol is not None:
        result = _result_from_policy(inst, best_pol, pcfg, t0, restarts_used, tuple(history))
        rep = check_feasible(inst, result.policy, scfg.pair_exclusions)
        if not rep.ok:
            raise RuntimeError("internal error: incumbent failed verification")
        return result

    if systematic_complete and not systematic_any_feasible:
        status = STATUS_INFEASIBLE
    elif _conflict_clique_exceeds(ctx):
        status = STATUS_INFEASIBLE
    else:
        status = STATUS_TIMEOUT
    return SolveResult(
        status=status,
        policy=None,
        objective=None,
        dormant_remaining=None,
        dormant_baseline=int((inst.ud_hat & ~inst.ud).sum()),
        per_user_dormant=None,
        per_user_slack=None,
        per_user_penalty=None,
        wall_time=wall,
        restarts_used=restarts_used,
        incumbent_history=(),
    )


@dataclass(frozen=True)
class SweepPoint:
    num_groups: int
    status: str
    objective: float | None
    dormant_remaining: int | None
    dormant_pct: float | None
    wall_time: float


def sweep_groups(
    inst: AccessInstance,
    grid: list[int],
    scfg: SolveConfig,
    pcfg: PenaltyConfig = PenaltyConfig(),
    seed_clusters: dict[str, int] | None = None,
) -> list[SweepPoint]:
    """Solve across a group-budget grid, warm-starting each budget with
    the previous incumbent so quality never regresses as groups grow."""
    points: list[SweepPoint] = []
    warm: GeneratedPolicy | None = scfg.warm_start
    baseline = int((inst.ud_hat & ~inst.ud).sum())
    for ng in grid:
        cfg = replace(scfg, num_groups=ng, warm_start=warm)
        res = solve(inst, cfg, pcfg, seed_clusters=seed_clusters)
        pct = None
        if res.status == STATUS_FEASIBLE:
            warm = res.policy
            pct = 0.0 if baseline == 0 else 100.0 * res.dormant_remaining / baseline
        points.append(
            SweepPoint(
                num_groups=ng,
                status=res.status,
                objective=res.objective,
                dormant_remaining=res.dormant_remaining,
                dormant_pct=pct,
                wall_time=res.wall_time,
            )
        )
    return points
