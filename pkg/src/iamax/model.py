"""Core data model for access-policy hardening.

An :class:`AccessInstance` captures a snapshot of an identity system:
users, datastores (with optional data-type tags), any pre-existing
access groups, direct user-to-datastore permissions, and the access
events actually observed.  Two boolean matrices drive everything else:

* ``ud_hat`` -- who *may* touch what (direct permissions plus anything
  reachable through existing group memberships), frozen at load time.
* ``ud`` -- who *did* touch what, according to the observed accesses.

A :class:`GeneratedPolicy` is a candidate replacement policy expressed
as group memberships (``ug``) and group-to-datastore grants (``dad``).
The policy composes with the existing permissions: a user can reach a
datastore only if some group grants it *and* the user could already
reach it.  ``effective_access`` evaluates that composition and
``dormant_count`` measures how much granted-but-unused access remains.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GENERATED_GROUP_PREFIX = "group-"
DEFAULT_ACTIONS = ("datastore:Read",)


class InstanceError(ValueError):
    """Raised when instance data is malformed or inconsistent."""


def _dedup_check(kind: str, ids: list[str]) -> None:
    seen: set[str] = set()
    for i in ids:
        if i in seen:
            raise InstanceError(f"duplicate {kind} id: {i!r}")
        seen.add(i)


@dataclass(frozen=True)
class AccessInstance:
    """Immutable snapshot of users, datastores, and their access relations.

    Matrices are boolean numpy arrays indexed by the sorted position of
    the corresponding id (see ``user_index`` etc.).  ``ud <= ud_hat``
    holds elementwise; construction rejects anything else.
    """

    users: tuple[str, ...]
    datastores: tuple[str, ...]
    data_types: tuple[str, ...]
    existing_groups: tuple[str, ...]
    ud: np.ndarray          # |U| x |D| observed access
    ud_hat: np.ndarray      # |U| x |D| granted access (direct + via groups)
    dt: np.ndarray          # |D| x |T| datastore data-type tags
    group_members: np.ndarray   # |G| x |U| existing-group membership
    group_grants: np.ndarray    # |G| x |D| existing-group grants
    direct_permissions: tuple[tuple[str, str], ...]
    access_counts: dict[tuple[str, str], int] = field(compare=False)
    user_index: dict[str, int] = field(compare=False)
    datastore_index: dict[str, int] = field(compare=False)
    type_index: dict[str, int] = field(compare=False)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_datastores(self) -> int:
        return len(self.datastores)

    def stats(self) -> "InstanceStats":
        """Summary counts; permission edges are raw relationship edges
        (direct permission, user->group, group->datastore), matching how
        the underlying multipartite graph is sized."""
        perm = len(self.direct_permissions)
        perm += int(self.group_members.sum()) + int(self.group_grants.sum())
        return InstanceStats(
            n_users=self.n_users,
            n_datastores=self.n_datastores,
            n_dynamic_edges=int(self.ud.sum()),
            n_permission_edges=perm,
        )


@dataclass(frozen=True)
class InstanceStats:
    n_users: int
    n_datastores: int
    n_dynamic_edges: int
    n_permission_edges: int


def build_instance(
    users: list[str],
    datastores: list[dict],
    groups: list[dict],
    direct_permissions: list[list[str]],
    accesses: list[list],
) -> AccessInstance:
    """Assemble an :class:`AccessInstance` from parsed JSON pieces.

    Raises :class:`InstanceError` on duplicate ids, dangling references,
    non-positive access counts, or observed accesses without a matching
    grant (the offending pairs are listed in the message).
    """
    users = sorted(users)
    _dedup_check("user", users)
    ds_sorted = sorted(datastores, key=lambda d: d["id"])
    ds_ids = [d["id"] for d in ds_sorted]
    _dedup_check("datastore", ds_ids)
    groups_sorted = sorted(groups, key=lambda g: g["id"])
    group_ids = [g["id"] for g in groups_sorted]
    _dedup_check("group", group_ids)

    uidx = {u: i for i, u in enumerate(users)}
    didx = {d: i for i, d in enumerate(ds_ids)}

    types = sorted({t for d in ds_sorted for t in d.get("data_types", [])})
    tidx = {t: i for i, t in enumerate(types)}
    dt = np.zeros((len(ds_ids), len(types)), dtype=bool)
    for d in ds_sorted:
        for t in d.get("data_types", []):
            dt[didx[d["id"]], tidx[t]] = True

    nu, nd, ng = len(users), len(ds_ids), len(group_ids)
    gm = np.zeros((ng, nu), dtype=bool)
    gg = np.zeros((ng, nd), dtype=bool)
    for gi, g in enumerate(groups_sorted):
        for m in g.get("members", []):
            if m not in uidx:
                raise InstanceError(f"group {g['id']!r} references unknown user {m!r}")
            gm[gi, uidx[m]] = True
        for d in g.get("datastores", []):
            if d not in didx:
                raise InstanceError(f"group {g['id']!r} references unknown datastore {d!r}")
            gg[gi, didx[d]] = True

    ud_hat = np.zeros((nu, nd), dtype=bool)
    direct: list[tuple[str, str]] = []
    for pair in direct_permissions:
        if len(pair) != 2:
            raise InstanceError(f"malformed direct permission entry: {pair!r}")
        u, d = pair
        if u not in uidx:
            raise InstanceError(f"direct permission references unknown user {u!r}")
        if d not in didx:
            raise InstanceError(f"direct permission references unknown datastore {d!r}")
        direct.append((u, d))
    direct = sorted(set(direct))
    for u, d in direct:
        ud_hat[uidx[u], didx[d]] = True
    if ng:
        ud_hat |= gm.T @ gg  # reachability through existing groups

    ud = np.zeros((nu, nd), dtype=bool)
    counts: dict[tuple[str, str], int] = {}
    for entry in accesses:
        if len(entry) != 3:
            raise InstanceError(f"malformed access entry: {entry!r}")
        u, d, c = entry
        if u not in uidx:
            raise InstanceError(f"access references unknown user {u!r}")
        if d not in didx:
            raise InstanceError(f"access references unknown datastore {d!r}")
        if not isinstance(c, int) or c < 1:
            raise InstanceError(f"access count must be a positive integer: {entry!r}")
        counts[(u, d)] = counts.get((u, d), 0) + c
        ud[uidx[u], didx[d]] = True

    bad = ud & ~ud_hat
    if bad.any():
        pairs = [(users[i], ds_ids[j]) for i, j in zip(*np.nonzero(bad))]
        raise InstanceError(
            "observed access without a matching grant: "
            + ", ".join(f"({u}, {d})" for u, d in pairs[:20])
            + ("..." if len(pairs) > 20 else "")
        )

    for m in (ud, ud_hat, dt, gm, gg):
        m.setflags(write=False)
    return AccessInstance(
        users=tuple(users),
        datastores=tuple(ds_ids),
        data_types=tuple(types),
        existing_groups=tuple(group_ids),
        ud=ud,
        ud_hat=ud_hat,
        dt=dt,
        group_members=gm,
        group_grants=gg,
        direct_permissions=tuple(direct),
        access_counts=counts,
        user_index=uidx,
        datastore_index=didx,
        type_index=tidx,
    )


def _instance_to_obj(inst: AccessInstance) -> dict:
    datastores = [
        {"id": d, "data_types": [t for t in inst.data_types if inst.dt[j, inst.type_index[t]]]}
        for j, d in enumerate(inst.datastores)
    ]
    groups = [
        {
            "id": g,
            "members": [u for i, u in enumerate(inst.users) if inst.group_members[gi, i]],
            "datastores": [d for j, d in enumerate(inst.datastores) if inst.group_grants[gi, j]],
        }
        for gi, g in enumerate(inst.existing_groups)
    ]
    accesses = sorted([u, d, c] for (u, d), c in inst.access_counts.items())
    return {
        "users": list(inst.users),
        "datastores": datastores,
        "groups": groups,
        "direct_permissions": [list(p) for p in inst.direct_permissions],
        "accesses": accesses,
    }


def load_instance(path: str | Path) -> AccessInstance:
    """Parse an instance JSON file.  See ``build_instance`` for checks."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"invalid JSON in {path}: {exc}") from exc
    for key in ("users", "datastores", "direct_permissions", "accesses"):
        if key not in obj:
            raise InstanceError(f"missing required key {key!r} in {path}")
    return build_instance(
        obj["users"],
        obj["datastores"],
        obj.get("groups", []),
        obj["direct_permissions"],
        obj["accesses"],
    )


def save_instance(inst: AccessInstance, path: str | Path) -> None:
    """Write the canonical JSON form (sorted ids, sorted edge lists).

    Loading the written file reproduces the same instance; saving that
    reload is byte-identical.
    """
    text = json.dumps(_instance_to_obj(inst), indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text, encoding="utf-8")


@dataclass(frozen=True)
class GeneratedPolicy:
    """Candidate policy: user->group membership and group->datastore grants."""

    num_groups: int
    ug: np.ndarray   # |U| x num_groups
    dad: np.ndarray  # num_groups x |D|

    def __post_init__(self) -> None:
        ug = np.asarray(self.ug, dtype=bool)
        dad = np.asarray(self.dad, dtype=bool)
        if ug.ndim != 2 or dad.ndim != 2:
            raise ValueError("ug and dad must be 2-d boolean matrices")
        if ug.shape[1] != self.num_groups or dad.shape[0] != self.num_groups:
            raise ValueError(
                f"group-axis mismatch: ug has {ug.shape[1]} columns, "
                f"dad has {dad.shape[0]} rows, num_groups={self.num_groups}"
            )
        ug.setflags(write=False)
        dad.setflags(write=False)
        object.__setattr__(self, "ug", ug)
        object.__setattr__(self, "dad", dad)

    def group_id(self, g: int) -> str:
        return f"{GENERATED_GROUP_PREFIX}{g:03d}"


def effective_access(inst: AccessInstance, pol: GeneratedPolicy) -> np.ndarray:
    """Access the policy actually enables: granted via some group the
    user belongs to, masked by the pre-existing grants ``ud_hat``."""
    if pol.ug.shape[0] != inst.n_users or pol.dad.shape[1] != inst.n_datastores:
        raise ValueError("policy shape does not match instance")
    return (pol.ug @ pol.dad) & inst.ud_hat


@dataclass(frozen=True)
class DormancyReport:
    """Granted-but-unused access, before and after a policy."""

    baseline_total: int
    remaining_total: int
    per_user: np.ndarray

    @property
    def remaining_pct(self) -> float:
        if self.baseline_total == 0:
            return 0.0
        return 100.0 * self.remaining_total / self.baseline_total


def dormant_count(inst: AccessInstance, pol: GeneratedPolicy) -> DormancyReport:
    eff = effective_access(inst, pol)
    dormant = eff & ~inst.ud
    per_user = dormant.sum(axis=1)
    baseline = int((inst.ud_hat & ~inst.ud).sum())
    return DormancyReport(
        baseline_total=baseline,
        remaining_total=int(dormant.sum()),
        per_user=per_user,
    )


@dataclass(frozen=True)
class PolicyStatement:
    effect: str
    actions: tuple[str, ...]
    principal: str
    resources: tuple[str, ...]


@dataclass(frozen=True)
class PolicyDocument:
    statements: tuple[PolicyStatement, ...]
    memberships: dict[str, tuple[str, ...]] = field(compare=False)

    def to_json_obj(self) -> dict:
        return {
            "Statement": [
                {
                    "Effect": s.effect,
                    "Action": list(s.actions),
                    "Principal": s.principal,
                    "Resource": list(s.resources),
                }
                for s in self.statements
            ]
        }

    def memberships_obj(self) -> dict:
        return {g: list(ms) for g, ms in sorted(self.memberships.items())}


def render_policy(
    inst: AccessInstance,
    pol: GeneratedPolicy,
    actions: tuple[str, ...] = DEFAULT_ACTIONS,
) -> PolicyDocument:
    """Render a policy as Allow statements plus a membership sidecar.

    Groups with no members produce no statement and no sidecar entry.
    """
    statements = []
    memberships: dict[str, tuple[str, ...]] = {}
    for g in range(pol.num_groups):
        members = [inst.users[i] for i in np.nonzero(pol.ug[:, g])[0]]
        if not members:
            continue
        resources = tuple(inst.datastores[j] for j in np.nonzero(pol.dad[g])[0])
        gid = pol.group_id(g)
        statements.append(
            PolicyStatement(effect="Allow", actions=tuple(actions), principal=gid, resources=resources)
        )
        memberships[gid] = tuple(members)
    return PolicyDocument(statements=tuple(statements), memberships=memberships)


def save_policy(
    inst: AccessInstance,
    pol: GeneratedPolicy,
    policy_path: str | Path,
    memberships_path: str | Path,
    actions: tuple[str, ...] = DEFAULT_ACTIONS,
) -> PolicyDocument:
    doc = render_policy(inst, pol, actions)
    Path(policy_path).write_text(
        json.dumps(doc.to_json_obj(), indent=2) + "\n", encoding="utf-8"
    )
    Path(memberships_path).write_text(
        json.dumps(doc.memberships_obj(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return doc


def load_policy(
    inst: AccessInstance, policy_path: str | Path, memberships_path: str | Path
) -> GeneratedPolicy:
    """Rebuild a :class:`GeneratedPolicy` from rendered policy files.

    Dropped (empty) groups are not recoverable, so the rebuilt policy has
    one group per statement; effective access is unaffected.
    """
    with open(policy_path, "r", encoding="utf-8") as fh:
        pobj = json.load(fh)
    with open(memberships_path, "r", encoding="utf-8") as fh:
        mobj = json.load(fh)
    statements = pobj.get("Statement", [])
    ng = len(statements)
    ug = np.zeros((inst.n_users, ng), dtype=bool)
    dad = np.zeros((ng, inst.n_datastores), dtype=bool)
    for g, st in enumerate(statements):
        gid = st["Principal"]
        for u in mobj.get(gid, []):
            if u not in inst.user_index:
                raise InstanceError(f"membership file references unknown user {u!r}")
            ug[inst.user_index[u], g] = True
        for d in st.get("Resource", []):
            if d not in inst.datastore_index:
                raise InstanceError(f"policy references unknown datastore {d!r}")
            dad[g, inst.datastore_index[d]] = True
    return GeneratedPolicy(num_groups=ng, ug=ug, dad=dad)
