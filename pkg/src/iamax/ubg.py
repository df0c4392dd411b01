"""Unified behavioral graph export.

Serializes an instance (plus optional activity events) as a single
graph for downstream representation learning.  Nodes are users,
existing groups, and datastores; edges carry one of four relations:

* ``permission``   -- structural: direct user grants and group grants;
* ``membership``   -- structural: user belongs to existing group;
* ``data_flow``    -- behavioral: observed data operations;
* ``config_update``-- behavioral: observed configuration operations.

Structural edges weigh 1.0.  Behavioral edge weights are the actor's
event counts normalized per relation, so each actor's outgoing weights
within a relation sum to 1.  Node features are ``[degree, risk]``
followed by the datastore's data-type histogram (zeros for non-stores).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import AccessInstance

log = logging.getLogger("iamax.ubg")

RELATIONS = ("data_flow", "config_update", "permission", "membership")
BEHAVIORAL = ("data_flow", "config_update")


class GraphError(ValueError):
    """Raised when events or graph files are malformed."""


@dataclass(frozen=True)
class Event:
    actor: str
    target: str
    op_class: str  # data_flow | config_update
    count: int


@dataclass(frozen=True)
class GraphNode:
    id: str
    kind: str
    features: tuple[float, ...]


@dataclass(frozen=True)
class GraphEdge:
    a: str
    b: str
    rel: str
    weight: float


@dataclass(frozen=True)
class BehavioralGraph:
    nodes: tuple[GraphNode, ...]
    edges: tuple[GraphEdge, ...]
    num_components: int


def events_from_accesses(inst: AccessInstance) -> list[Event]:
    """Treat the instance's observed accesses as data-flow events."""
    return [
        Event(actor=u, target=d, op_class="data_flow", count=c)
        for (u, d), c in sorted(inst.access_counts.items())
    ]


def _components(node_ids: list[str], edges: list[GraphEdge]) -> int:
    parent = {n: n for n in node_ids}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in edges:
        ra, rb = find(e.a), find(e.b)
        if ra != rb:
            parent[ra] = rb
    return len({find(n) for n in node_ids})


def build_graph(
    inst: AccessInstance,
    events: list[Event] | None = None,
    *,
    risk_scores: dict[str, float] | None = None,
) -> BehavioralGraph:
    """Assemble the behavioral graph for an instance.

    ``events`` defaults to the instance's observed accesses as data
    flows.  ``risk_scores`` overrides the risk feature (default 0.0).
    """
    if events is None:
        events = events_from_accesses(inst)
    risk_scores = risk_scores or {}

    node_kind: dict[str, str] = {}
    for u in inst.users:
        node_kind[u] = "user"
    for g in inst.existing_groups:
        if g in node_kind:
            raise GraphError(f"id {g!r} is both a user and a group")
    for g in inst.existing_groups:
        node_kind[g] = "group"
    for d in inst.datastores:
        if d in node_kind:
            raise GraphError(f"datastore id {d!r} collides with another node")
        node_kind[d] = "datastore"

    edges: list[GraphEdge] = []
    for u, d in inst.direct_permissions:
        edges.append(GraphEdge(a=u, b=d, rel="permission", weight=1.0))
    for gi, g in enumerate(inst.existing_groups):
        for j in np.nonzero(inst.group_grants[gi])[0]:
            edges.append(GraphEdge(a=g, b=inst.datastores[j], rel="permission", weight=1.0))
        for i in np.nonzero(inst.group_members[gi])[0]:
            edges.append(GraphEdge(a=inst.users[i], b=g, rel="membership", weight=1.0))

    # behavioral: aggregate counts per (actor, target, op), then
    # normalize each actor's outgoing weights within the relation
    agg: dict[tuple[str, str, str], int] = {}
    for ev in events:
        if ev.op_class not in BEHAVIORAL:
            raise GraphError(f"unknown op class {ev.op_class!r}")
        if ev.actor not in node_kind:
            raise GraphError(f"event actor {ev.actor!r} is not a node")
        if ev.target not in node_kind:
            raise GraphError(f"event target {ev.target!r} is not a node")
        if not isinstance(ev.count, int) or ev.count < 1:
            raise GraphError(f"event count must be a positive integer: {ev}")
        agg[(ev.actor, ev.target, ev.op_class)] = (
            agg.get((ev.actor, ev.target, ev.op_class), 0) + ev.count
        )
    actor_totals: dict[tuple[str, str], int] = {}
    for (actor, _, op), c in agg.items():
        actor_totals[(actor, op)] = actor_totals.get((actor, op), 0) + c
    for (actor, target, op), c in sorted(agg.items()):
        edges.append(
            GraphEdge(a=actor, b=target, rel=op, weight=c / actor_totals[(actor, op)])
        )

    edges.sort(key=lambda e: (e.rel, e.a, e.b))

    degree: dict[str, int] = {n: 0 for n in node_kind}
    for e in edges:
        degree[e.a] += 1
        degree[e.b] += 1

    ntypes = len(inst.data_types)
    nodes: list[GraphNode] = []
    for nid in sorted(node_kind):
        kind = node_kind[nid]
        hist = [0.0] * ntypes
        if kind == "datastore":
            row = inst.dt[inst.datastore_index[nid]]
            total = float(row.sum())
            if total > 0:
                hist = [float(v) / total for v in row]
        feats = (float(degree[nid]), float(risk_scores.get(nid, 0.0)), *hist)
        nodes.append(GraphNode(id=nid, kind=kind, features=feats))

    ncomp = _components(sorted(node_kind), edges)
    return BehavioralGraph(nodes=tuple(nodes), edges=tuple(edges), num_components=ncomp)


def save_graph(graph: BehavioralGraph, path: str | Path) -> None:
    obj = {
        "nodes": [
            {"id": n.id, "kind": n.kind, "features": list(n.features)} for n in graph.nodes
        ],
        "edges": [
            {"a": e.a, "b": e.b, "rel": e.rel, "w": e.weight} for e in graph.edges
        ],
    }
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_graph(path: str | Path) -> BehavioralGraph:
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if "nodes" not in obj or "edges" not in obj:
        raise GraphError(f"missing 'nodes' or 'edges' in {path}")
    ids = set()
    nodes = []
    for n in obj["nodes"]:
        if n["id"] in ids:
            raise GraphError(f"duplicate node id {n['id']!r}")
        ids.add(n["id"])
        nodes.append(
            GraphNode(id=n["id"], kind=n["kind"], features=tuple(float(x) for x in n["features"]))
        )
    edges = []
    for e in obj["edges"]:
        if e["rel"] not in RELATIONS:
            raise GraphError(f"unknown relation {e['rel']!r}")
        if e["a"] not in ids or e["b"] not in ids:
            raise GraphError(f"edge references unknown node: {e}")
        if not (e["w"] > 0):
            raise GraphError(f"edge weight must be positive: {e}")
        edges.append(GraphEdge(a=e["a"], b=e["b"], rel=e["rel"], weight=float(e["w"])))
    nodes.sort(key=lambda n: n.id)
    edges.sort(key=lambda e: (e.rel, e.a, e.b))
    ncomp = _components([n.id for n in nodes], edges)
    return BehavioralGraph(nodes=tuple(nodes), edges=tuple(edges), num_components=ncomp)
