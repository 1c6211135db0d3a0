"""Supply, quality and cost tracking on a solved network state.

Gas is assumed to mix perfectly and instantly at nodes: every stream leaving
a node carries the flow-weighted average of what entered it (incoming edges
plus local supply). The per-node mixtures solve one sparse linear system, so
directed cycles are handled without iteration. Costs are tracked the same
way, as money carried with the gas: purchase cost enters at supplies,
operating and fixed cost at the element that causes it.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import spsolve

from .errors import AmbiguousPath, NoPath, ZeroFlowRegion
from .network import Network, NetworkState, natural_key

FLOW_EPS = 1e-12


# -- path selection ----------------------------------------------------------------------
@dataclass
class PathSelection:
    origin: str
    terminus: str
    via: tuple = ()
    nodes: list = field(default_factory=list)
    edges: list = field(default_factory=list)
    cumulative_km: dict = field(default_factory=dict)

    @property
    def length(self) -> float:
        return self.cumulative_km[self.terminus] if self.nodes else 0.0

    def reversed(self) -> "PathSelection":
        L = self.length
        return PathSelection(self.terminus, self.origin, tuple(reversed(self.via)),
                             list(reversed(self.nodes)), list(reversed(self.edges)),
                             {n: L - d for n, d in self.cumulative_km.items()})


def edge_length(edge) -> float:
    return float(edge.pipe.length) if edge.pipe is not None else 0.0


def _segment_paths(g, a, b, limit):
    if a == b:
        return [[a]]
    return list(itertools.islice(nx.all_simple_paths(g, a, b), limit))


def _branch_nodes(paths):
    out = set()
    for p, q in itertools.combinations(paths, 2):
        for j, (x, y) in enumerate(zip(p, q)):
            if x != y:
                out.add(p[j - 1])
                break
    return sorted(out, key=natural_key)


def select_path(net: Network, origin, terminus, via=(), limit=200) -> PathSelection:
    """The unique simple path origin -> via... -> terminus.

    Raises AmbiguousPath (with the nodes where the candidates split) when
    more than one simple path fits, NoPath when none does.
    """
    stops = [origin, *via, terminus]
    for n in stops:
        if n not in net.nodes:
            raise NoPath(f"unknown node {n!r}")
    g = nx.Graph()
    g.add_nodes_from(net.nodes)
    g.add_edges_from((e.i, e.k) for e in net.edges.values())
    segs = [_segment_paths(g, a, b, limit) for a, b in zip(stops, stops[1:])]
    full = []
    for combo in itertools.product(*segs):
        nodes = list(combo[0])
        for seg in combo[1:]:
            nodes += seg[1:]
        if len(set(nodes)) == len(nodes):
            full.append(nodes)
            if len(full) > limit:
                break
    if not full:
        raise NoPath(f"no simple path from {origin} to {terminus} through {list(via)}")
    if len(full) > 1:
        raise AmbiguousPath(f"{len(full)} paths fit; add a waypoint at a branch node",
                            _branch_nodes(full))
    nodes = full[0]
    edges, km = [], {nodes[0]: 0.0}
    for a, b in zip(nodes, nodes[1:]):
        cands = sorted((e for e in net.incident(a) if e.other(a) == b), key=lambda e: natural_key(e.id))
        e = cands[0]
        edges.append(e.id)
        km[b] = km[a] + edge_length(e)
    return PathSelection(origin, terminus, tuple(via), nodes, edges, km)


# -- mixing system ------------------------------------------------------------------------
@dataclass
class _Mixing:
    nodes: list          # nodes with throughput, in system order
    index: dict
    throughput: dict     # node -> total inflow (edges + local supply)
    matrix: object       # diag(throughput) - incoming-flow weights
    inflow: dict         # node -> [(edge id, upstream node, flow)]


def _directed(net, state, eid):
    """(upstream node, downstream node, |flow|) of an edge."""
    e = net.edges[eid]
    q = state.flows[eid]
    return (e.i, e.k, q) if q >= 0 else (e.k, e.i, -q)


def _mixing(net: Network, state: NetworkState) -> _Mixing:
    scale = max([1.0] + [abs(v) for v in state.intensities.values()])
    eps = FLOW_EPS * scale
    inflow = {n: [] for n in net.nodes}
    thr = {n: max(0.0, -state.intensities[n]) for n in net.nodes}
    for eid in net.edges:
        u, v, f = _directed(net, state, eid)
        if f > eps:
            inflow[v].append((eid, u, f))
            thr[v] += f
    nodes = [n for n in net.nodes if thr[n] > eps]
    idx = {n: j for j, n in enumerate(nodes)}
    # a region fed only by circulation has throughput but no path from a supply
    g = nx.DiGraph()
    g.add_nodes_from(nodes)
    for v in nodes:
        for _, u, _ in inflow[v]:
            g.add_edge(u, v)
    fed = set()
    for s in nodes:
        if -state.intensities[s] > eps:
            fed |= {s} | nx.descendants(g, s)
    dead = [n for n in nodes if n not in fed]
    if dead:
        raise ZeroFlowRegion("circulating flow without any supply feeding it",
                             sorted(dead, key=natural_key))
    rows, cols, vals = [], [], []
    for v in nodes:
        j = idx[v]
        rows.append(j), cols.append(j), vals.append(thr[v])
        for _, u, f in inflow[v]:
            rows.append(j), cols.append(idx[u]), vals.append(-f)
    n = len(nodes)
    mat = csr_matrix((vals, (rows, cols)), shape=(n, n))
    return _Mixing(nodes, idx, thr, mat, inflow)


def _solve(mix: _Mixing, rhs):
    rhs = np.asarray(rhs, dtype=float)
    if rhs.size == 0:
        return rhs
    sol = spsolve(mix.matrix.tocsc(), rhs)
    return np.asarray(sol).reshape(rhs.shape)


# -- supply and quality tracking ----------------------------------------------------------------
@dataclass
class SupplyFractions:
    supplies: list
    nodes: dict          # node -> {supply: fraction}; nodes without flow are absent
    edges: dict          # edge -> {supply: fraction}; edges without flow are absent


def supply_tracking(net: Network, state: NetworkState) -> SupplyFractions:
    """Share of each supply in the gas at every node and edge with flow."""
    mix = _mixing(net, state)
    supplies = sorted((n for n in mix.nodes if -state.intensities[n] > 0), key=natural_key)
    rhs = np.zeros((len(mix.nodes), len(supplies)))
    for c, s in enumerate(supplies):
        rhs[mix.index[s], c] = -state.intensities[s]
    X = _solve(mix, rhs) if supplies else np.zeros((len(mix.nodes), 0))
    X = np.clip(X, 0.0, 1.0)
    X /= np.maximum(X.sum(axis=1, keepdims=True), 1e-300)
    nodes = {n: dict(zip(supplies, map(float, X[mix.index[n]]))) for n in mix.nodes}
    edges = {}
    for v in mix.nodes:
        for eid, u, _ in mix.inflow[v]:
            edges[eid] = dict(nodes[u])
    return SupplyFractions(supplies, nodes, edges)


def quality_tracking(net: Network, state: NetworkState, supply_quality: dict,
                     fractions: SupplyFractions | None = None) -> dict:
    """Blended calorific value (MJ/m3) at each node with flow."""
    fr = fractions or supply_tracking(net, state)
    missing = [s for s in fr.supplies if s not in supply_quality]
    if missing:
        raise ValueError(f"no quality given for supplies {missing}")
    return {n: math.fsum(f * supply_quality[s] for s, f in fs.items()) for n, fs in fr.nodes.items()}


# -- cost tracking --------------------------------------------------------------------------
@dataclass
class CostBreakdown:
    """Money per day passing each node, by component, and unit cost.

    `purchase` is per supply; `normalized` is the cost of one Mm3 of gas at
    the node (total cost flow / throughput); `delivered` maps demand nodes to
    the money per day leaving with their gas.
    """
    purchase: dict
    operating: dict
    fixed: dict
    total: dict
    normalized: dict
    delivered: dict
    injected: float
    unallocated: float = 0.0
    path: PathSelection | None = None

    @property
    def delivered_total(self) -> float:
        return math.fsum(self.delivered.values())

    def on_path(self) -> list:
        nodes = self.path.nodes if self.path else list(self.total)
        return [n for n in nodes if n in self.total]


def station_opex(net: Network, state: NetworkState, fuel_price=0.0, electricity_price=0.0,
                 gas=None) -> dict:
    """Operating cost per station (money/d) from rated power and energy price per MWh.

    Turbine-driven groups burn fuel, electric ones draw electricity.
    """
    out = {}
    for e in net.edges.values():
        if e.kind != "compressor_station" or not e.choices:
            continue
        sch = e.choices[e.choice]
        cost = 0.0
        for g in sch.active_groups:
            price = electricity_price if g.driver_type.startswith("electr") else fuel_price
            cost += g.units_running * g.unit_power * 24.0 * price
        if cost:
            out[e.id] = cost
    return out


def cost_tracking(net: Network, state: NetworkState, prices: dict, opex: dict | None = None,
                  fixed: dict | None = None, path: PathSelection | None = None,
                  fractions: SupplyFractions | None = None) -> CostBreakdown:
    """Follow purchase, operating and fixed cost flows downstream.

    `prices` maps supply node -> money per Mm3, `opex` station edge -> money/d,
    `fixed` any edge -> money/d. Cost injected on an edge without flow has
    nowhere to go and is reported as `unallocated`.
    """
    opex, fixed = opex or {}, fixed or {}
    mix = _mixing(net, state)
    fr = fractions or supply_tracking(net, state)
    supplies = fr.supplies
    missing = [s for s in supplies if s not in prices]
    if missing:
        raise ValueError(f"no purchase price for supplies {missing}")
    n = len(mix.nodes)
    head_of = {}
    for v in mix.nodes:
        for eid, _, _ in mix.inflow[v]:
            head_of[eid] = v
    rhs = np.zeros((n, len(supplies) + 2))
    for c, s in enumerate(supplies):
        rhs[mix.index[s], c] = -state.intensities[s] * prices[s]
    unalloc = 0.0
    for col, inj in ((len(supplies), opex), (len(supplies) + 1, fixed)):
        for eid, money in inj.items():
            if eid not in net.edges:
                raise ValueError(f"cost on unknown edge {eid!r}")
            if eid in head_of:
                rhs[mix.index[head_of[eid]], col] += money
            else:
                unalloc += money
    C = _solve(mix, rhs)       # unit cost per component at each node
    purchase, operating, fixd, total, normalized, delivered = {}, {}, {}, {}, {}, {}
    for v in mix.nodes:
        j = mix.index[v]
        t = mix.throughput[v]
        purchase[v] = {s: float(C[j, c] * t) for c, s in enumerate(supplies)}
        operating[v] = float(C[j, len(supplies)] * t)
        fixd[v] = float(C[j, len(supplies) + 1] * t)
        total[v] = math.fsum(list(purchase[v].values()) + [operating[v], fixd[v]])
        normalized[v] = total[v] / t
        q = state.intensities[v]
        if q > 0:
            delivered[v] = normalized[v] * q
    injected = math.fsum([-state.intensities[s] * prices[s] for s in supplies]
                         + list(opex.values()) + list(fixed.values()))
    return CostBreakdown(purchase, operating, fixd, total, normalized, delivered, injected,
                         unalloc, path)


# -- path profile tables -------------------------------------------------------------------------
def path_profile(net: Network, path: PathSelection, state: NetworkState,
                 fractions: SupplyFractions | None = None, quality: dict | None = None,
                 costs: CostBreakdown | None = None):
    """Two tables along a path: one row per node and one per edge.

    Edge flows are oriented along the path (positive = towards the terminus).
    """
    node_rows, edge_rows = [], []
    sup = fractions.supplies if fractions else []
    for n in path.nodes:
        row = {"node": n, "km": path.cumulative_km[n], "pressure": state.pressures.get(n, math.nan),
               "intensity": state.intensities.get(n, math.nan)}
        if fractions:
            fs = fractions.nodes.get(n, {})
            for s in sup:
                row[f"frac_{s}"] = fs.get(s, math.nan)
        if quality is not None:
            row["quality"] = quality.get(n, math.nan)
        if costs is not None:
            row["cost_flow"] = costs.total.get(n, math.nan)
            row["unit_cost"] = costs.normalized.get(n, math.nan)
        node_rows.append(row)
    for a, b, eid in zip(path.nodes, path.nodes[1:], path.edges):
        e = net.edges[eid]
        q = state.flows[eid] * e.sign_at(a)
        row = {"edge": eid, "from": a, "to": b, "km_from": path.cumulative_km[a],
               "km_to": path.cumulative_km[b], "flow": q}
        if fractions:
            fs = fractions.edges.get(eid, {})
            for s in sup:
                row[f"frac_{s}"] = fs.get(s, math.nan)
        edge_rows.append(row)
    return node_rows, edge_rows
