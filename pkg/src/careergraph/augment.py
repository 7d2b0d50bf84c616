"""Global-to-local subgraph augmentation.

Expands a user subgraph with hop-bounded neighborhood structure from the
trusted global graph.  Modes:

  structural  breadth-first expansion from the user's nodes up to
              hop_threshold hops, plus every global edge among the expanded
              node set (the induced subgraph)
  none        identity
  random      adds the same number of nodes structural would have added,
              sampled uniformly from global nodes absent from the subgraph
  mixed       same procedure as structural; the caller supplies a global
              graph deliberately built from real plus fake resumes

Truncation beyond max_added_nodes keeps the closest nodes first, breaking
ties by (kind, vocabulary index) so the result is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import UsageError
from .graph import AUGMENTED, KIND_ORDER, HeteroGraph, Node, NodeKind, Subgraph

MODES = ("structural", "none", "random", "mixed")


@dataclass
class AugmentConfig:
    mode: str = "structural"
    hop_threshold: int = 2
    max_added_nodes: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"unknown augmentation mode {self.mode!r}")
        if self.hop_threshold < 0:
            raise UsageError(f"hop_threshold must be >= 0, got {self.hop_threshold}")
        if self.max_added_nodes < 0:
            raise UsageError(f"max_added_nodes must be >= 0, got {self.max_added_nodes}")


def hop_distances(
    global_graph: HeteroGraph, sources: Iterable[Node], max_hops: int | None = None
) -> dict[Node, int]:
    """Multi-source BFS distance over the undirected view of all relations.

    Unreachable nodes are absent from the result.  Sources not present in the
    graph are ignored.
    """
    frontier = [n for n in sources if global_graph.has_node(n)]
    if not frontier:
        return {}
    dist: dict[Node, int] = {n: 0 for n in frontier}
    depth = 0
    while frontier and (max_hops is None or depth < max_hops):
        depth += 1
        nxt: list[Node] = []
        for node in frontier:
            for nb in global_graph.undirected_neighbors(node):
                if nb not in dist:
                    dist[nb] = depth
                    nxt.append(nb)
        frontier = nxt
    return dist


def _structural_additions(sub: Subgraph, global_graph: HeteroGraph, cfg: AugmentConfig) -> list[Node]:
    """Nodes structural mode adds, in (hop, kind, key) order, cap applied."""
    sources = [n for n in sub.graph.nodes if global_graph.has_node(n)]
    dist = hop_distances(global_graph, sources, max_hops=cfg.hop_threshold)
    discovered = [
        (d, KIND_ORDER[node[0]], node[1], node)
        for node, d in dist.items()
        if node not in sub.graph.nodes
    ]
    discovered.sort(key=lambda t: t[:3])
    return [node for _, _, _, node in discovered[: cfg.max_added_nodes]]


def _induce(sub: Subgraph, global_graph: HeteroGraph, added: list[Node]) -> Subgraph:
    """New subgraph = sub + added nodes + all global edges among the union."""
    graph = sub.graph.copy()
    out = Subgraph(
        graph=graph,
        resume_id=sub.resume_id,
        label=sub.label,
        origin=dict(sub.origin),
        original_order=list(sub.original_order),
        augmented_order=list(added),
        parent=global_graph,
    )
    for node in added:
        graph.add_node(*node)
        out.origin[node] = AUGMENTED
    node_set = graph.nodes
    for rel in graph.relations:
        if rel not in global_graph.relations:
            continue
        for (src, dst), attr in global_graph.forward_edge_items(rel):
            if src in node_set and dst in node_set:
                graph.copy_edge(rel, src, dst, attr)
    for desc_id, vec in global_graph.desc_vectors.items():
        if graph.has_node((NodeKind.DESCRIPTION, desc_id)):
            graph.desc_vectors.setdefault(desc_id, vec)
    return out


def augment_subgraph(sub: Subgraph, global_graph: HeteroGraph, cfg: AugmentConfig) -> Subgraph:
    """Expand *sub* with trusted context from *global_graph* per cfg.mode."""
    if cfg.mode == "none":
        return sub
    if cfg.mode in ("structural", "mixed"):
        added = _structural_additions(sub, global_graph, cfg)
        return _induce(sub, global_graph, added)
    if cfg.mode == "random":
        n_add = len(_structural_additions(sub, global_graph, cfg))
        candidates = sorted(
            (n for n in global_graph.nodes if n not in sub.graph.nodes),
            key=lambda n: (KIND_ORDER[n[0]], n[1]),
        )
        n_add = min(n_add, len(candidates))
        rng = np.random.default_rng([cfg.seed, 0x5EED])
        picked_idx = rng.choice(len(candidates), size=n_add, replace=False) if n_add else []
        added = sorted(
            (candidates[int(i)] for i in picked_idx),
            key=lambda n: (KIND_ORDER[n[0]], n[1]),
        )
        return _induce(sub, global_graph, added)
    raise UsageError(f"unknown augmentation mode {cfg.mode!r}")
