"""Graph data model, network state, conservation law and spanning-tree decomposition.

Units: pressure in bar (absolute), flow and intensity in Mm3/d, length in km.

Sign convention: the conservation residual at node i is the sum of flows
leaving i plus the node intensity Q_i, so a supply node carries a negative
Q_i (gas leaves the node into the network) and a demand node a positive one.
"""
from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .errors import Disconnected, DanglingEdge, DuplicateId, MissingValue, SelfLoop

INF = math.inf

EDGE_KINDS = ("pipe", "compressor_station", "control_valve", "shutoff_valve", "contract_link")
# lower value is preferred when growing the spanning tree
KIND_PRIORITY = {"pipe": 0, "compressor_station": 1, "control_valve": 2,
                 "shutoff_valve": 2, "contract_link": 3}
ROLES = ("supply", "demand", "junction", "root")


def natural_key(s) -> tuple:
    """Sort key treating digit runs numerically, so '9' < '29' < '100'."""
    parts = re.split(r"(\d+)", str(s))
    return tuple((0, int(p)) if p.isdigit() else (1, p) for p in parts if p != "")


@dataclass(frozen=True)
class Node:
    id: str
    intensity_bounds: tuple = (-INF, INF)
    pressure_bounds: tuple = (0.0, INF)
    intensity: float = 0.0
    pressure: float | None = None
    roles: frozenset = frozenset()

    def __post_init__(self):
        lo, hi = self.pressure_bounds
        if lo < 0 or lo > hi:
            raise ValueError(f"node {self.id}: bad pressure bounds {self.pressure_bounds}")
        lo, hi = self.intensity_bounds
        if lo > hi:
            raise ValueError(f"node {self.id}: bad intensity bounds {self.intensity_bounds}")
        bad = set(self.roles) - set(ROLES)
        if bad:
            raise ValueError(f"node {self.id}: unknown roles {sorted(bad)}")

    @property
    def intensity_free(self) -> bool:
        lo, hi = self.intensity_bounds
        return hi > lo


@dataclass(frozen=True, eq=False)
class Edge:
    """Undirected element with a reference orientation i -> k.

    `choices` lists the discrete alternatives d_ik (compressor schemes, valve
    positions); `control` is the continuous parameter c_ik inside
    `control_bounds`; `side` holds named side-constraint boxes such as
    ``{"ratio": (1.0, 2.5)}``. Sub-pipes of one pipeline section share a
    `section` tag.
    """
    id: str
    i: str
    k: str
    kind: str = "pipe"
    flow_bounds: tuple = (-INF, INF)
    pipe: object = None
    choices: tuple = ()
    choice: int = 0
    control_bounds: tuple = (0.0, 1.0)
    control: float | None = None
    side: Mapping = field(default_factory=dict)
    section: str | None = None

    def __post_init__(self):
        if self.kind not in EDGE_KINDS:
            raise ValueError(f"edge {self.id}: unknown kind {self.kind!r}")
        if self.flow_bounds[0] > self.flow_bounds[1]:
            raise ValueError(f"edge {self.id}: bad flow bounds {self.flow_bounds}")
        n = self.n_choices
        if not 0 <= self.choice < n:
            raise ValueError(f"edge {self.id}: choice {self.choice} outside 0..{n - 1}")

    @property
    def endpoints(self) -> tuple:
        return (self.i, self.k)

    @property
    def n_choices(self) -> int:
        return max(1, len(self.choices))

    def other(self, node) -> str:
        return self.k if node == self.i else self.i

    def sign_at(self, node) -> int:
        """+1 if the stored orientation leaves `node`, -1 if it enters."""
        return 1 if node == self.i else -1

    def reversed(self) -> "Edge":
        lo, hi = self.flow_bounds
        return replace(self, i=self.k, k=self.i, flow_bounds=(-hi, -lo))


class Network:
    """Validated, connected network. Treat as immutable after construction."""

    def __init__(self, nodes: Iterable[Node], edges: Iterable[Edge]):
        self.nodes: dict[str, Node] = {}
        for n in nodes:
            if n.id in self.nodes:
                raise DuplicateId(f"duplicate node id {n.id!r}")
            self.nodes[n.id] = n
        self.edges: dict[str, Edge] = {}
        self.adjacency: dict[str, list[str]] = {n: [] for n in self.nodes}
        for e in edges:
            if e.id in self.edges:
                raise DuplicateId(f"duplicate edge id {e.id!r}")
            for end in (e.i, e.k):
                if end not in self.nodes:
                    raise DanglingEdge(f"edge {e.id!r} references unknown node {end!r}")
            if e.i == e.k:
                raise SelfLoop(f"edge {e.id!r} is a self-loop at {e.i!r}")
            self.edges[e.id] = e
            self.adjacency[e.i].append(e.id)
            self.adjacency[e.k].append(e.id)
        if not self.nodes:
            raise Disconnected("network has no nodes")
        seen = _reachable(self, next(iter(self.nodes)))
        if len(seen) != len(self.nodes):
            missing = sorted(set(self.nodes) - seen, key=natural_key)
            raise Disconnected(f"nodes not reachable: {missing[:10]}")

    def __repr__(self):
        return f"Network(|V|={len(self.nodes)}, |E|={len(self.edges)})"

    def incident(self, node) -> list[Edge]:
        return [self.edges[e] for e in self.adjacency[node]]

    def with_nodes(self, **updates) -> "Network":
        """Copy with some nodes replaced: ``net.with_nodes(A=node)``."""
        nodes = [updates.get(n, v) for n, v in self.nodes.items()]
        return Network(nodes, self.edges.values())

    def with_edges(self, **updates) -> "Network":
        edges = [updates.get(e, v) for e, v in self.edges.items()]
        return Network(self.nodes.values(), edges)

    def to_networkx(self):
        import networkx as nx
        g = nx.MultiGraph()
        g.add_nodes_from(self.nodes)
        for e in self.edges.values():
            g.add_edge(e.i, e.k, key=e.id)
        return g


def _reachable(net: Network, start, skip=frozenset()) -> set:
    seen = {start}
    todo = [start]
    while todo:
        v = todo.pop()
        for eid in net.adjacency[v]:
            if eid in skip:
                continue
            w = net.edges[eid].other(v)
            if w not in seen:
                seen.add(w)
                todo.append(w)
    return seen


def build_network(node_specs: list, edge_specs: list) -> Network:
    """Build a Network from Node/Edge objects or plain dicts of their fields."""
    nodes = [n if isinstance(n, Node) else Node(**n) for n in node_specs]
    edges = [e if isinstance(e, Edge) else Edge(**e) for e in edge_specs]
    return Network(nodes, edges)


@dataclass
class NetworkState:
    pressures: dict = field(default_factory=dict)
    intensities: dict = field(default_factory=dict)
    flows: dict = field(default_factory=dict)

    def flow_from(self, net: Network, edge_id, node) -> float:
        """Flow on `edge_id` oriented out of `node` (q_ik = -q_ki)."""
        return net.edges[edge_id].sign_at(node) * self.flows[edge_id]

    def copy(self) -> "NetworkState":
        return NetworkState(dict(self.pressures), dict(self.intensities), dict(self.flows))


def conservation_residual(net: Network, state: NetworkState) -> dict:
    """Per node: sum of flows leaving the node plus its intensity."""
    missing = [n for n in net.nodes if n not in state.intensities]
    missing += [e for e in net.edges if e not in state.flows]
    if missing:
        raise MissingValue(f"state lacks values for {missing[:10]}")
    res = {}
    for n in net.nodes:
        # fsum keeps the residual free of accumulation-order noise
        res[n] = math.fsum([state.flow_from(net, e, n) for e in net.adjacency[n]]
                           + [state.intensities[n]])
    return res


@dataclass
class TreeDecomposition:
    root: str
    tree_edges: list
    chords: list
    fundamental_cycles: dict    # chord id -> [(edge id, +1|-1), ...]
    parent: dict                # node -> (parent node, edge id); root absent
    order: list                 # nodes in BFS order, root first

    def children(self) -> dict:
        ch = {n: [] for n in self.order}
        for v in self.order[1:]:
            p, e = self.parent[v]
            ch[p].append((v, e))
        return ch

    def path_to_root(self, node) -> list:
        """Tree edges from `node` up to the root as (edge id, child node)."""
        out = []
        while node != self.root:
            p, e = self.parent[node]
            out.append((e, node))
            node = p
        return out


def _is_joint(net: Network, node, root) -> bool:
    """An intermediate point of a section: exactly two sub-pipes of the same section."""
    inc = [net.edges[e] for e in net.adjacency[node]]
    return (node != root and len(inc) == 2 and inc[0].section is not None
            and inc[0].section == inc[1].section)


def spanning_tree(net: Network, root, exclude: Iterable = ()) -> TreeDecomposition:
    """Deterministic breadth-first spanning tree.

    Neighbours are explored in order of (kind priority, edge id) so pipes are
    preferred over stations and stations over valves. A section split into
    tagged sub-pipes counts as a single step, so it is reached as a whole; when such a run closes a cycle its
    last sub-pipe becomes the chord. Edges in `exclude` (closed valves) are
    left out entirely and appear neither as tree edges nor as chords.
    """
    if root not in net.nodes:
        raise MissingValue(f"root {root!r} is not a node")
    skip = set(exclude)
    joints = {n for n in net.nodes if _is_joint(net, n, root)
              and not skip.intersection(net.adjacency[n])}
    key = lambda eid: (KIND_PRIORITY[net.edges[eid].kind], natural_key(eid))
    parent = {}
    order = [root]
    seen = {root}
    used = set()
    tree = set()
    q = deque([root])
    while q:
        v = q.popleft()
        for eid in sorted(net.adjacency[v], key=key):
            if eid in skip or eid in used:
                continue
            used.add(eid)
            u, w = v, net.edges[eid].other(v)
            # follow the section through its joints
            while w not in seen and w in joints:
                seen.add(w)
                parent[w] = (u, eid)
                tree.add(eid)
                order.append(w)
                nxt = next(x for x in net.adjacency[w] if x != eid)
                used.add(nxt)
                u, w, eid = w, net.edges[nxt].other(w), nxt
            if w in seen:
                continue
            seen.add(w)
            parent[w] = (u, eid)
            tree.add(eid)
            order.append(w)
            q.append(w)
    if len(seen) != len(net.nodes):
        raise Disconnected("network is disconnected once excluded edges are removed")
    tree_edges = [e for e in net.edges if e in tree]
    chords = [e for e in net.edges if e not in tree and e not in skip]
    depth = {root: 0}
    for v in order[1:]:
        depth[v] = depth[parent[v][0]] + 1
    cycles = {}
    for c in chords:
        e = net.edges[c]
        # walk chord i -> k, then back along the tree from k to i
        up_k, up_i = [], []
        a, b = e.k, e.i
        while a != b:
            if depth[a] >= depth[b]:
                pa, pe = parent[a]
                up_k.append((pe, net.edges[pe].sign_at(a)))
                a = pa
            else:
                pb, pe = parent[b]
                up_i.append((pe, net.edges[pe].sign_at(pb)))
                b = pb
        cycles[c] = [(c, 1)] + up_k + list(reversed(up_i))
    return TreeDecomposition(root, tree_edges, chords, cycles, parent, order)
