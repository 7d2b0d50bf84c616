"""Heterogeneous multi-layer career graphs.

Node kinds: title, company, description.  Relations:

  intra-layer   title_transition, company_transition (directed, chronological)
                desc_similar (symmetric, cosine >= tau over description vectors)
  cross-layer   worked_at (title -> company, duration-attributed)
                has_description (title -> description)

Directed relations expose a distinct inverse relation kind so message passing
reaches both endpoints.  Inverse edges are derived from the forward store and
are never serialized separately.  Parallel worked_at observations are merged
into one edge holding the mean duration and a multiplicity count; repeated
transitions likewise keep a multiplicity.  Self-loop transitions are dropped.

A node is identified by (kind, vocabulary index) everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .corpus import DescriptionTable, Resume, VocabSet
from .errors import DataError, UsageError


class NodeKind(str, Enum):
    TITLE = "title"
    COMPANY = "company"
    DESCRIPTION = "description"


# Sort order for deterministic node enumeration.
KIND_ORDER = {NodeKind.TITLE: 0, NodeKind.COMPANY: 1, NodeKind.DESCRIPTION: 2}

Node = tuple[NodeKind, int]


class Relation(str, Enum):
    TITLE_TRANSITION = "title_transition"
    COMPANY_TRANSITION = "company_transition"
    DESC_SIMILAR = "desc_similar"
    WORKED_AT = "worked_at"
    HAS_DESCRIPTION = "has_description"
    INV_TITLE_TRANSITION = "inv_title_transition"
    INV_COMPANY_TRANSITION = "inv_company_transition"
    INV_WORKED_AT = "inv_worked_at"
    INV_HAS_DESCRIPTION = "inv_has_description"


FORWARD_RELATIONS = (
    Relation.TITLE_TRANSITION,
    Relation.COMPANY_TRANSITION,
    Relation.DESC_SIMILAR,
    Relation.WORKED_AT,
    Relation.HAS_DESCRIPTION,
)

INVERSE_OF = {
    Relation.TITLE_TRANSITION: Relation.INV_TITLE_TRANSITION,
    Relation.COMPANY_TRANSITION: Relation.INV_COMPANY_TRANSITION,
    Relation.WORKED_AT: Relation.INV_WORKED_AT,
    Relation.HAS_DESCRIPTION: Relation.INV_HAS_DESCRIPTION,
}

FORWARD_OF = {inv: fwd for fwd, inv in INVERSE_OF.items()}

# Endpoint typing per forward relation: (src kind, dst kind).
RELATION_ENDPOINTS = {
    Relation.TITLE_TRANSITION: (NodeKind.TITLE, NodeKind.TITLE),
    Relation.COMPANY_TRANSITION: (NodeKind.COMPANY, NodeKind.COMPANY),
    Relation.DESC_SIMILAR: (NodeKind.DESCRIPTION, NodeKind.DESCRIPTION),
    Relation.WORKED_AT: (NodeKind.TITLE, NodeKind.COMPANY),
    Relation.HAS_DESCRIPTION: (NodeKind.TITLE, NodeKind.DESCRIPTION),
}

DURATION_RELATIONS = frozenset({Relation.WORKED_AT, Relation.INV_WORKED_AT})

# Graph-layer selection: which forward relations each named layer enables.
LAYER_RELATIONS = {
    "title": (Relation.TITLE_TRANSITION,),
    "company": (Relation.COMPANY_TRANSITION,),
    "description": (Relation.DESC_SIMILAR,),
    "cross": (Relation.WORKED_AT, Relation.HAS_DESCRIPTION),
}

ALL_LAYERS = frozenset(LAYER_RELATIONS)


def relations_for_layers(layers: frozenset[str] | set[str]) -> frozenset[Relation]:
    unknown = set(layers) - ALL_LAYERS
    if unknown:
        raise UsageError(f"unknown graph layers: {sorted(unknown)}")
    rels: set[Relation] = set()
    for layer in layers:
        rels.update(LAYER_RELATIONS[layer])
    return frozenset(rels)


def message_relations(forward: frozenset[Relation]) -> list[Relation]:
    """All relation kinds message passing iterates over, in a stable order."""
    out: list[Relation] = []
    for rel in FORWARD_RELATIONS:
        if rel in forward:
            out.append(rel)
            if rel in INVERSE_OF:
                out.append(INVERSE_OF[rel])
    return out


class EdgeAttr:
    """Merged attributes of one (relation, src, dst) edge."""

    __slots__ = ("_dur_sum", "multiplicity")

    def __init__(self, duration: float | None = None, multiplicity: int = 1):
        self._dur_sum = None if duration is None else float(duration) * multiplicity
        self.multiplicity = multiplicity

    @property
    def duration(self) -> float | None:
        if self._dur_sum is None:
            return None
        return self._dur_sum / self.multiplicity

    def merge(self, duration: float | None) -> None:
        self.multiplicity += 1
        if duration is not None:
            if self._dur_sum is None:
                raise DataError("cannot merge a duration into a duration-less edge")
            self._dur_sum += float(duration)

    def copy(self) -> "EdgeAttr":
        attr = EdgeAttr.__new__(EdgeAttr)
        attr._dur_sum = self._dur_sum
        attr.multiplicity = self.multiplicity
        return attr

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EdgeAttr)
            and self.multiplicity == other.multiplicity
            and (
                (self._dur_sum is None) == (other._dur_sum is None)
                and (self._dur_sum is None or abs(self.duration - other.duration) < 1e-12)
            )
        )


class HeteroGraph:
    """Typed node/edge store used for the global graph and user subgraphs.

    Only forward relations are stored; inverse-relation queries are answered
    from the forward adjacency, so the two views can never drift apart.
    """

    def __init__(self, relations: frozenset[Relation] = frozenset(FORWARD_RELATIONS)):
        bad = set(relations) - set(FORWARD_RELATIONS)
        if bad:
            raise UsageError(f"relations must be forward kinds, got {sorted(r.value for r in bad)}")
        self.relations = frozenset(relations)
        self._nodes: set[Node] = set()
        self._edges: dict[Relation, dict[tuple[Node, Node], EdgeAttr]] = {
            rel: {} for rel in self.relations
        }
        self._in: dict[Relation, dict[Node, list[Node]]] = {rel: {} for rel in self.relations}
        self._out: dict[Relation, dict[Node, list[Node]]] = {rel: {} for rel in self.relations}
        self.desc_vectors: dict[int, np.ndarray] = {}
        self.meta: dict = {}

    # -- nodes ------------------------------------------------------------

    def add_node(self, kind: NodeKind, key: int) -> Node:
        node = (kind, key)
        self._nodes.add(node)
        return node

    def has_node(self, node: Node) -> bool:
        return node in self._nodes

    @property
    def nodes(self) -> set[Node]:
        return self._nodes

    def sorted_nodes(self) -> list[Node]:
        return sorted(self._nodes, key=lambda n: (KIND_ORDER[n[0]], n[1]))

    def node_count(self) -> int:
        return len(self._nodes)

    # -- edges ------------------------------------------------------------

    def _check_edge(self, rel: Relation, src: Node, dst: Node) -> None:
        if rel not in self.relations:
            raise UsageError(f"relation {rel.value} is not enabled on this graph")
        want_src, want_dst = RELATION_ENDPOINTS[rel]
        if src[0] is not want_src or dst[0] is not want_dst:
            raise DataError(
                f"{rel.value} must connect {want_src.value}->{want_dst.value}, "
                f"got {src[0].value}->{dst[0].value}"
            )
        if src not in self._nodes or dst not in self._nodes:
            raise DataError(f"edge endpoints must be added as nodes first: {src} -> {dst}")

    def add_edge(self, rel: Relation, src: Node, dst: Node, duration: float | None = None) -> None:
        """Add or merge one observation of a forward edge.

        desc_similar pairs are normalized to key order; transition self-loops
        are silently dropped.
        """
        if rel is Relation.DESC_SIMILAR and src[1] > dst[1]:
            src, dst = dst, src
        if src == dst and rel in (
            Relation.TITLE_TRANSITION,
            Relation.COMPANY_TRANSITION,
            Relation.DESC_SIMILAR,
        ):
            return
        self._check_edge(rel, src, dst)
        if rel in DURATION_RELATIONS and (duration is None or duration < 1):
            raise DataError(f"worked_at edges need a duration >= 1, got {duration}")
        if rel not in DURATION_RELATIONS and duration is not None:
            raise DataError(f"{rel.value} edges carry no duration")
        attr = self._edges[rel].get((src, dst))
        if attr is None:
            self._edges[rel][(src, dst)] = EdgeAttr(duration)
            self._in[rel].setdefault(dst, []).append(src)
            self._out[rel].setdefault(src, []).append(dst)
        else:
            attr.merge(duration)

    def copy_edge(self, rel: Relation, src: Node, dst: Node, attr: EdgeAttr) -> None:
        """Install a pre-merged edge (used by augmentation and deserialization)."""
        self._check_edge(rel, src, dst)
        if (src, dst) in self._edges[rel]:
            return
        self._edges[rel][(src, dst)] = attr.copy()
        self._in[rel].setdefault(dst, []).append(src)
        self._out[rel].setdefault(src, []).append(dst)

    def edges(self, rel: Relation):
        """Iterate (src, dst, attr) under any relation kind, inverses included."""
        if rel in FORWARD_OF:  # derived inverse view
            fwd = FORWARD_OF[rel]
            if fwd not in self.relations:
                return
            for (src, dst), attr in self._edges[fwd].items():
                yield dst, src, attr
        elif rel is Relation.DESC_SIMILAR:
            if rel not in self.relations:
                return
            for (src, dst), attr in self._edges[rel].items():
                yield src, dst, attr
                yield dst, src, attr
        else:
            if rel not in self.relations:
                return
            for (src, dst), attr in self._edges[rel].items():
                yield src, dst, attr

    def forward_edge_items(self, rel: Relation):
        if rel not in self.relations:
            return
        yield from self._edges[rel].items()

    def edge_attr(self, rel: Relation, src: Node, dst: Node) -> EdgeAttr | None:
        if rel in FORWARD_OF:
            rel, src, dst = FORWARD_OF[rel], dst, src
        if rel is Relation.DESC_SIMILAR and src[1] > dst[1]:
            src, dst = dst, src
        if rel not in self.relations:
            return None
        return self._edges[rel].get((src, dst))

    def in_neighbors(self, rel: Relation, node: Node) -> list[Node]:
        """Nodes u with an edge u -> node under *rel* (inverse kinds supported)."""
        if rel in FORWARD_OF:
            fwd = FORWARD_OF[rel]
            if fwd not in self.relations:
                return []
            return self._out[fwd].get(node, [])
        if rel not in self.relations:
            return []
        if rel is Relation.DESC_SIMILAR:
            return self._in[rel].get(node, []) + self._out[rel].get(node, [])
        return self._in[rel].get(node, [])

    def undirected_neighbors(self, node: Node) -> set[Node]:
        """Union of neighbors across every enabled relation, both directions."""
        out: set[Node] = set()
        for rel in self.relations:
            out.update(self._in[rel].get(node, []))
            out.update(self._out[rel].get(node, []))
        return out

    def edge_count(self) -> int:
        return sum(len(d) for d in self._edges.values())

    def copy(self) -> "HeteroGraph":
        g = HeteroGraph(self.relations)
        g._nodes = set(self._nodes)
        for rel in self.relations:
            g._edges[rel] = {k: v.copy() for k, v in self._edges[rel].items()}
            g._in[rel] = {k: list(v) for k, v in self._in[rel].items()}
            g._out[rel] = {k: list(v) for k, v in self._out[rel].items()}
        g.desc_vectors = dict(self.desc_vectors)
        g.meta = dict(self.meta)
        return g


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def description_edges(
    desc_table: DescriptionTable, tau: float, desc_ids: set[int] | None = None
) -> set[tuple[int, int]]:
    """Symmetric similarity pairs: (u, v) with u < v and cos(h_u, h_v) >= tau."""
    entries = [
        (entry.desc_id, entry.vector)
        for _, entry in sorted(desc_table.items())
        if desc_ids is None or entry.desc_id in desc_ids
    ]
    if len(entries) < 2:
        return set()
    ids = [d for d, _ in entries]
    mat = np.stack([v for _, v in entries]).astype(np.float64)
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms < 1e-12):
        bad = ids[int(np.argmin(norms))]
        raise DataError(f"description vector for desc id {bad} has zero norm")
    unit = mat / norms[:, None]
    sims = unit @ unit.T
    pairs: set[tuple[int, int]] = set()
    n = len(ids)
    for i in range(n):
        for j in range(i + 1, n):
            if sims[i, j] >= tau:
                a, b = ids[i], ids[j]
                pairs.add((a, b) if a < b else (b, a))
    return pairs


def build_global_graph(
    resumes: list[Resume],
    desc_table: DescriptionTable,
    tau: float = 0.9,
    relations: frozenset[Relation] = frozenset(FORWARD_RELATIONS),
    allow_synthetic: bool = False,
) -> HeteroGraph:
    """Build the trusted global graph from genuine (label-0) resumes.

    Any label-1 resume is a hard error unless *allow_synthetic* is set, which
    exists solely for the deliberately noisy mixed-graph ablation.
    """
    if not allow_synthetic:
        for r in resumes:
            if r.label != 0:
                raise DataError(
                    f"resume {r.id!r} has label 1; synthetic data would poison "
                    f"the trusted global graph"
                )
    graph = HeteroGraph(relations)
    for r in resumes:
        _add_resume_structure(graph, r, desc_table)
    if Relation.DESC_SIMILAR in relations:
        present = {key for kind, key in graph.nodes if kind is NodeKind.DESCRIPTION}
        for u, v in sorted(description_edges(desc_table, tau, present)):
            graph.add_edge(
                Relation.DESC_SIMILAR,
                (NodeKind.DESCRIPTION, u),
                (NodeKind.DESCRIPTION, v),
            )
    for title_id, entry in desc_table.items():
        node = (NodeKind.DESCRIPTION, entry.desc_id)
        if graph.has_node(node):
            graph.desc_vectors[entry.desc_id] = entry.vector
    graph.meta = {
        "tau": tau,
        "built_from": sorted(r.id for r in resumes),
        "resume_count": len(resumes),
    }
    return graph


def _add_resume_structure(graph: HeteroGraph, resume: Resume, desc_table: DescriptionTable) -> None:
    """Add one resume's nodes, transitions, worked_at and has_description edges."""
    prev_title: Node | None = None
    prev_company: Node | None = None
    for entry in resume.entries:
        title = graph.add_node(NodeKind.TITLE, entry.title_id)
        company = graph.add_node(NodeKind.COMPANY, entry.company_id)
        if Relation.WORKED_AT in graph.relations:
            graph.add_edge(Relation.WORKED_AT, title, company, duration=entry.duration_months)
        desc = desc_table.get(entry.title_id)
        if desc is not None:
            desc_node = graph.add_node(NodeKind.DESCRIPTION, desc.desc_id)
            if Relation.HAS_DESCRIPTION in graph.relations:
                if graph.edge_attr(Relation.HAS_DESCRIPTION, title, desc_node) is None:
                    graph.add_edge(Relation.HAS_DESCRIPTION, title, desc_node)
        if prev_title is not None and Relation.TITLE_TRANSITION in graph.relations:
            graph.add_edge(Relation.TITLE_TRANSITION, prev_title, title)
        if prev_company is not None and Relation.COMPANY_TRANSITION in graph.relations:
            graph.add_edge(Relation.COMPANY_TRANSITION, prev_company, company)
        prev_title, prev_company = title, company


# ---------------------------------------------------------------------------
# User subgraphs
# ---------------------------------------------------------------------------

ORIGINAL = "original"
AUGMENTED = "augmented"


@dataclass
class Subgraph:
    """A user's local career graph plus provenance flags for every node.

    original_order lists the user's own nodes in resume order (first
    appearance); augmented_order is filled by augmentation and follows
    (hop, kind, key) priority.  The parent field records the global graph the
    subgraph was augmented from, if any.
    """

    graph: HeteroGraph
    resume_id: str
    label: int
    origin: dict[Node, str] = field(default_factory=dict)
    original_order: list[Node] = field(default_factory=list)
    augmented_order: list[Node] = field(default_factory=list)
    parent: HeteroGraph | None = None

    def ordered_nodes(self) -> list[Node]:
        return self.original_order + self.augmented_order

    def original_nodes(self) -> list[Node]:
        return list(self.original_order)

    def validate(self) -> None:
        nodes = self.graph.nodes
        if set(self.ordered_nodes()) != nodes or len(self.ordered_nodes()) != len(nodes):
            raise DataError("subgraph node ordering does not cover its node set")
        for node, flag in self.origin.items():
            if flag not in (ORIGINAL, AUGMENTED):
                raise DataError(f"bad origin flag {flag!r} for {node}")
        for rel in self.graph.relations:
            for src, dst, _ in self.graph.edges(rel):
                if src not in nodes or dst not in nodes:
                    raise DataError(f"dangling edge {src} -> {dst}")


def build_user_subgraph(
    resume: Resume,
    vocabs: VocabSet,
    desc_table: DescriptionTable,
    relations: frozenset[Relation] = frozenset(FORWARD_RELATIONS),
) -> Subgraph:
    """The bare local graph of one resume: its entities and intra-resume edges.

    desc_similar edges never appear here; they arrive via augmentation from
    the global graph.
    """
    if not resume.entries:
        raise DataError(f"resume {resume.id!r} has no entries")
    graph = HeteroGraph(relations)
    sub = Subgraph(graph=graph, resume_id=resume.id, label=resume.label)

    def touch(kind: NodeKind, key: int) -> Node:
        node = (kind, key)
        if node not in graph.nodes:
            graph.add_node(kind, key)
            sub.origin[node] = ORIGINAL
            sub.original_order.append(node)
        return node

    prev_title: Node | None = None
    prev_company: Node | None = None
    for entry in resume.entries:
        title = touch(NodeKind.TITLE, entry.title_id)
        company = touch(NodeKind.COMPANY, entry.company_id)
        desc = desc_table.get(entry.title_id)
        desc_node = None
        if desc is not None:
            desc_node = touch(NodeKind.DESCRIPTION, desc.desc_id)
            graph.desc_vectors[desc.desc_id] = desc.vector
        if Relation.WORKED_AT in relations:
            graph.add_edge(Relation.WORKED_AT, title, company, duration=entry.duration_months)
        if desc_node is not None and Relation.HAS_DESCRIPTION in relations:
            if graph.edge_attr(Relation.HAS_DESCRIPTION, title, desc_node) is None:
                graph.add_edge(Relation.HAS_DESCRIPTION, title, desc_node)
        if prev_title is not None and Relation.TITLE_TRANSITION in relations:
            graph.add_edge(Relation.TITLE_TRANSITION, prev_title, title)
        if prev_company is not None and Relation.COMPANY_TRANSITION in relations:
            graph.add_edge(Relation.COMPANY_TRANSITION, prev_company, company)
        prev_title, prev_company = title, company
    return sub


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def graph_to_json(graph: HeteroGraph) -> dict:
    """Single JSON document with deterministic node and edge ordering."""
    nodes = graph.sorted_nodes()
    node_ids = {node: i for i, node in enumerate(nodes)}
    node_docs = [{"id": i, "kind": n[0].value, "key": n[1]} for i, n in enumerate(nodes)]
    edge_docs = []
    for rel in FORWARD_RELATIONS:
        if rel not in graph.relations:
            continue
        rows = []
        for (src, dst), attr in graph.forward_edge_items(rel):
            doc = {"kind": rel.value, "src": node_ids[src], "dst": node_ids[dst]}
            if attr.duration is not None:
                doc["duration"] = attr.duration
            if attr.multiplicity != 1 or rel in (
                Relation.WORKED_AT,
                Relation.TITLE_TRANSITION,
                Relation.COMPANY_TRANSITION,
            ):
                doc["multiplicity"] = attr.multiplicity
            rows.append(doc)
        rows.sort(key=lambda d: (d["src"], d["dst"]))
        edge_docs.extend(rows)
    return {
        "nodes": node_docs,
        "edges": edge_docs,
        "meta": dict(graph.meta),
        "relations": sorted(r.value for r in graph.relations),
    }


def graph_from_json(doc: dict, desc_table: DescriptionTable | None = None) -> HeteroGraph:
    relations = frozenset(Relation(r) for r in doc.get("relations", [r.value for r in FORWARD_RELATIONS]))
    graph = HeteroGraph(relations)
    by_id: dict[int, Node] = {}
    for nd in doc["nodes"]:
        node = graph.add_node(NodeKind(nd["kind"]), int(nd["key"]))
        by_id[int(nd["id"])] = node
    for ed in doc["edges"]:
        rel = Relation(ed["kind"])
        attr = EdgeAttr(duration=ed.get("duration"), multiplicity=int(ed.get("multiplicity", 1)))
        graph.copy_edge(rel, by_id[int(ed["src"])], by_id[int(ed["dst"])], attr)
    graph.meta = dict(doc.get("meta", {}))
    if desc_table is not None:
        for _, entry in desc_table.items():
            if graph.has_node((NodeKind.DESCRIPTION, entry.desc_id)):
                graph.desc_vectors[entry.desc_id] = entry.vector
    return graph


def save_graph(graph: HeteroGraph, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_json(graph), fh, sort_keys=True)
        fh.write("\n")


def load_graph(path: str, desc_table: DescriptionTable | None = None) -> HeteroGraph:
    with open(path, encoding="utf-8") as fh:
        return graph_from_json(json.load(fh), desc_table)


def graphs_equal(a: HeteroGraph, b: HeteroGraph) -> bool:
    """Structural equality: node set, enabled relations, edges and attributes."""
    if a.relations != b.relations or a.nodes != b.nodes:
        return False
    for rel in a.relations:
        ea = dict(a.forward_edge_items(rel))
        eb = dict(b.forward_edge_items(rel))
        if ea.keys() != eb.keys():
            return False
        for key in ea:
            if ea[key] != eb[key]:
                return False
    return True
