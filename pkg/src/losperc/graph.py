"""Line-of-sight connectivity graph and its connected components.

Nodes on a common street are collinear, so the components of the
"same street and distance <= r" graph are obtained by sorting each street's
nodes by arc and linking consecutive nodes whose gap is at most ``r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, TextIO

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .geometry import Point, Window
from .processes import NodeSet
from .pvt import Tessellation

USER, RELAY = 0, 1


class GraphNode(NamedTuple):
    kind: str
    source_id: int
    position: Point
    host_edges: tuple[int, ...]
    arc_per_host: tuple[float, ...]


class UnionFind:
    """Disjoint sets with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, i: int) -> int:
        parent = self.parent
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    def union(self, i: int, j: int) -> bool:
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return False
        if self.size[ri] < self.size[rj]:
            ri, rj = rj, ri
        self.parent[rj] = ri
        self.size[ri] += self.size[rj]
        return True

    def labels(self) -> np.ndarray:
        """Dense labels 0..k-1 numbered by first appearance."""
        roots = np.fromiter((self.find(i) for i in range(len(self.parent))),
                            dtype=np.int64, count=len(self.parent))
        _, lab = np.unique(roots, return_inverse=True)
        return _canonical(lab)


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel so that components are numbered by their smallest member."""
    if len(labels) == 0:
        return labels.astype(np.int64)
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(len(first), dtype=np.int64)
    remap[order] = np.arange(len(first))
    return remap[np.unique(labels, return_inverse=True)[1]]


@dataclass(frozen=True)
class ComponentLabels:
    label: np.ndarray
    sizes: np.ndarray

    @property
    def n_components(self) -> int:
        return len(self.sizes)

    @property
    def component_sizes(self) -> dict[int, int]:
        return {i: int(s) for i, s in enumerate(self.sizes)}

    def largest(self) -> int:
        return int(np.argmax(self.sizes)) if len(self.sizes) else -1


def label_components(n: int, pairs: np.ndarray, method: str = "csgraph") -> ComponentLabels:
    """Components of the graph on ``n`` nodes with edge list ``pairs`` (k, 2)."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if n == 0:
        return ComponentLabels(np.zeros(0, np.int64), np.zeros(0, np.int64))
    if method == "unionfind":
        uf = UnionFind(n)
        for i, j in pairs.tolist():
            uf.union(i, j)
        lab = uf.labels()
    elif method == "csgraph":
        m = coo_matrix((np.ones(len(pairs), dtype=np.int8), (pairs[:, 0], pairs[:, 1])),
                       shape=(n, n))
        _, lab = connected_components(m, directed=False)
        lab = _canonical(lab)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ComponentLabels(lab, np.bincount(lab))


@dataclass(frozen=True)
class GraphNodes:
    """Graph nodes as arrays: users first, then open relays.

    ``host_edge``/``host_arc``/``host_node`` enumerate (street, arc, node)
    incidences: one per user, one per street end for each open relay.
    """

    kind: np.ndarray
    source_id: np.ndarray
    position: np.ndarray
    host_edge: np.ndarray
    host_arc: np.ndarray
    host_node: np.ndarray

    def __len__(self):
        return len(self.kind)

    def __getitem__(self, i: int) -> GraphNode:
        m = self.host_node == i
        return GraphNode("user" if self.kind[i] == USER else "relay", int(self.source_id[i]),
                         Point(*self.position[i]), tuple(int(e) for e in self.host_edge[m]),
                         tuple(float(a) for a in self.host_arc[m]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def graph_nodes(t: Tessellation, z: NodeSet, within: Optional[Window] = None) -> GraphNodes:
    users, relays = z.users, z.relays
    if len(relays) != t.n_vertices:
        raise ValueError("node set does not match the tessellation (relay count)")
    if len(users) and (users.edge_id.min() < 0 or users.edge_id.max() >= t.n_edges):
        raise ValueError("node set does not match the tessellation (user edge ids)")
    u_keep = np.ones(len(users), bool)
    open_v = relays.open.copy()
    if within is not None:
        u_keep = within.contains_xy(users.position)
        if t.n_vertices:
            open_v &= within.contains_xy(t.vertices)
    u_idx = np.flatnonzero(u_keep)
    v_ids = np.flatnonzero(open_v)
    nu = len(u_idx)
    node_of_vertex = -np.ones(t.n_vertices, dtype=np.int64)
    node_of_vertex[v_ids] = nu + np.arange(len(v_ids))

    kind = np.r_[np.full(nu, USER), np.full(len(v_ids), RELAY)].astype(np.int8)
    source = np.r_[u_idx, v_ids].astype(np.int64)
    pos = np.concatenate([users.position[u_idx], t.vertices[v_ids]]) if len(kind) else np.zeros((0, 2))

    ea = np.flatnonzero(t.edge_va >= 0)
    ea = ea[node_of_vertex[t.edge_va[ea]] >= 0]
    eb = np.flatnonzero(t.edge_vb >= 0)
    eb = eb[node_of_vertex[t.edge_vb[eb]] >= 0]
    host_edge = np.concatenate([users.edge_id[u_idx], ea, eb]).astype(np.int64)
    host_arc = np.concatenate([users.arc[u_idx], np.zeros(len(ea)), t.edge_length[eb]])
    host_node = np.concatenate([np.arange(nu), node_of_vertex[t.edge_va[ea]],
                                node_of_vertex[t.edge_vb[eb]]]).astype(np.int64)
    order = np.lexsort((host_arc, host_edge))
    return GraphNodes(kind, source, pos, host_edge[order], host_arc[order], host_node[order])


def chain_pairs(nodes: GraphNodes, r: float) -> np.ndarray:
    """Consecutive same-street incidences at gap <= r (all of them for r = inf)."""
    he, ha, hn = nodes.host_edge, nodes.host_arc, nodes.host_node
    if len(he) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    same = he[1:] == he[:-1]
    if math.isfinite(r):
        same &= (ha[1:] - ha[:-1]) <= r
    return np.column_stack([hn[:-1][same], hn[1:][same]])


def build_graph(t: Tessellation, z: NodeSet, r: float, within: Optional[Window] = None,
                method: str = "csgraph") -> tuple[GraphNodes, ComponentLabels]:
    """Connectivity graph at finite range ``r``.

    ``within`` restricts the graph to the nodes inside a sub-window (the
    induced subgraph), which is exact because a street meets a square in a
    single interval.
    """
    if not (r > 0 and math.isfinite(r)):
        raise ValueError("r must be positive and finite; use build_graph_infinite_range")
    nodes = graph_nodes(t, z, within)
    return nodes, label_components(len(nodes), chain_pairs(nodes, r), method)


def build_graph_infinite_range(t: Tessellation, z: NodeSet, within: Optional[Window] = None,
                               method: str = "csgraph") -> tuple[GraphNodes, ComponentLabels]:
    nodes = graph_nodes(t, z, within)
    return nodes, label_components(len(nodes), chain_pairs(nodes, math.inf), method)


def crosses_window(nodes: GraphNodes, labels: ComponentLabels, w: Window, band: float) -> bool:
    """Left-right crossing: one component touches both vertical contact bands."""
    if not (band > 0 and 2 * band < w.width):
        raise ValueError("need 0 < band < width / 2")
    if len(nodes) == 0:
        return False
    x = nodes.position[:, 0]
    left = np.unique(labels.label[x <= w.min.x + band])
    if len(left) == 0:
        return False
    right = labels.label[x >= w.max.x - band]
    return bool(np.isin(right, left, assume_unique=False).any())


def dump_components(nodes: GraphNodes, labels: ComponentLabels, fh: TextIO) -> None:
    """``node i kind source x y label`` lines, for external plotting."""
    fh.write("# losperc components v1\n")
    for i in range(len(nodes)):
        kind = "user" if nodes.kind[i] == USER else "relay"
        x, y = (float(v) for v in nodes.position[i])
        fh.write(f"node {i} {kind} {nodes.source_id[i]} {x!r} {y!r} {labels.label[i]}\n")
