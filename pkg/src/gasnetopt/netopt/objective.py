"""Objective functions: separable edge terms plus node terms.

Every term knows a lower bound over a set of still-allowed discrete choices,
which branch-and-bound uses as its relaxation. Terms that do not look at the
continuous state (pressures, flows, controls) are flagged so the evaluator
can skip continuous refinement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from ..errors import MissingSetpoint
from ..hydraulics import GasProperties
from ..network import Network

OBJECTIVE_KINDS = ("power_min", "setpoint_deviation", "max_flow", "cost_min", "profit_max",
                   "weighted_avg_gas_cost", "specific_transport_cost")


@dataclass
class EdgeTerm:
    """F(p_i, p_k, q_ik, c_ik, d_ik) for one edge."""
    fn: Callable
    lower: Callable | None = None     # allowed choices -> lower bound
    uses_state: bool = True

    def bound(self, allowed) -> float:
        if self.lower is None:
            return -math.inf
        return self.lower(allowed)


@dataclass
class NodeTerm:
    """F(p_i, Q_i) for one node."""
    fn: Callable
    lower: float = -math.inf
    uses_state: bool = True


@dataclass
class GlobalTerm:
    """Non-separable term evaluated on the whole state (ratios of totals)."""
    fn: Callable                      # (net, state, choices) -> float
    lower: float = -math.inf
    uses_state: bool = True


@dataclass
class Objective:
    kind: str
    net: Network
    edge_terms: dict = field(default_factory=dict)
    node_terms: dict = field(default_factory=dict)
    global_terms: list = field(default_factory=list)
    pressure_targets: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")

    @property
    def continuous(self) -> bool:
        """True when the value depends on more than the discrete choices."""
        terms = list(self.edge_terms.values()) + list(self.node_terms.values()) + self.global_terms
        return any(t.uses_state for t in terms)

    def edge_value(self, eid, d) -> float | None:
        """Value of a state-independent edge term for choice d (else None)."""
        t = self.edge_terms.get(eid)
        if t is None:
            return 0.0
        if t.uses_state:
            return None
        return t.fn(None, None, None, None, d)

    def lower_bound(self, allowed: dict, fixed: dict) -> float:
        """Bound over all completions: fixed choices exact, others relaxed."""
        tot = 0.0
        for eid, t in self.edge_terms.items():
            if eid in fixed and not t.uses_state:
                tot += t.fn(None, None, None, None, fixed[eid])
            else:
                opts = (fixed[eid],) if eid in fixed else allowed.get(eid, (self.net.edges[eid].choice,))
                tot += t.bound(opts)
        tot += sum(t.lower for t in self.node_terms.values())
        tot += sum(t.lower for t in self.global_terms)
        return tot


def evaluate_objective(obj: Objective, solution) -> float:
    """Sum of edge, node and global terms on a solution's state."""
    net, st = obj.net, solution.state
    tot = 0.0
    for eid, t in obj.edge_terms.items():
        e = net.edges[eid]
        d = solution.choices.get(eid, e.choice)
        c = solution.controls.get(eid, e.control)
        if t.uses_state:
            tot += t.fn(st.pressures.get(e.i), st.pressures.get(e.k), st.flows.get(eid), c, d)
        else:
            tot += t.fn(None, None, None, None, d)
    for n, t in obj.node_terms.items():
        tot += t.fn(st.pressures.get(n), st.intensities.get(n))
    for t in obj.global_terms:
        tot += t.fn(net, st, solution.choices)
    return tot


# -- constructors -------------------------------------------------------------

def _station_power_term(edge):
    powers = [s.rated_power for s in edge.choices]
    return EdgeTerm(lambda pi, pk, q, c, d, p=powers: p[d],
                    lambda allowed, p=powers: min(p[d] for d in allowed),
                    uses_state=False)


def power_min(net: Network) -> Objective:
    """Total rated power of running machines, MW."""
    terms = {e.id: _station_power_term(e) for e in net.edges.values()
             if e.kind == "compressor_station" and e.choices}
    return Objective("power_min", net, edge_terms=terms)


def setpoint_deviation(net: Network, setpoints: dict, weights=None) -> Objective:
    """Squared deviation from node set-points.

    `setpoints` maps node -> {"pressure": bar, "intensity": Mm3/d}; either key
    may be omitted. Weights default to 1.
    """
    if not setpoints:
        raise MissingSetpoint("set-point deviation needs at least one set-point")
    weights = weights or {}
    terms = {}
    targets = {}
    for n, sp in setpoints.items():
        if n not in net.nodes:
            raise MissingSetpoint(f"set-point for unknown node {n!r}")
        ps, qs = sp.get("pressure"), sp.get("intensity")
        if ps is None and qs is None:
            raise MissingSetpoint(f"node {n!r} has an empty set-point")
        w = weights.get(n, 1.0)

        def fn(p, q, ps=ps, qs=qs, w=w, n=n):
            if ps is not None and p is None:
                raise MissingSetpoint(f"no pressure at node {n!r}")
            v = 0.0
            if ps is not None:
                v += (p - ps) ** 2
            if qs is not None:
                v += (q - qs) ** 2
            return w * v
        terms[n] = NodeTerm(fn, 0.0)
        if ps is not None:
            targets[n] = ps
    return Objective("setpoint_deviation", net, node_terms=terms, pressure_targets=targets)


def _demand_nodes(net, nodes):
    if nodes is not None:
        return list(nodes)
    return [n for n, v in net.nodes.items() if "demand" in v.roles]


def max_flow(net: Network, nodes=None) -> Objective:
    """Maximize delivered demand: minimize the negative sum of demand intensities."""
    terms = {}
    for n in _demand_nodes(net, nodes):
        hi = net.nodes[n].intensity_bounds[1]
        terms[n] = NodeTerm(lambda p, q: -q, -hi)
    return Objective("max_flow", net, node_terms=terms)


def _supply_volume(q):
    # supplies carry negative intensity under the conservation convention
    return max(-q, 0.0)


def _energy_terms(net, energy_price):
    """Operating cost of stations: rated power (MW) x 24 h x price per MWh."""
    terms = {}
    if not energy_price:
        return terms
    for e in net.edges.values():
        if e.kind == "compressor_station" and e.choices:
            cost = [s.rated_power * 24.0 * energy_price for s in e.choices]
            terms[e.id] = EdgeTerm(lambda pi, pk, q, c, d, v=cost: v[d],
                                   lambda allowed, v=cost: min(v[d] for d in allowed), False)
    return terms


def cost_min(net: Network, purchase_prices: dict, energy_price=0.0) -> Objective:
    """Purchase cost of supplied gas plus station energy cost, money per day.

    `purchase_prices` maps supply node -> money per Mm3.
    """
    node_terms = {}
    for n, price in purchase_prices.items():
        lo = net.nodes[n].intensity_bounds[0]
        node_terms[n] = NodeTerm(lambda p, q, c=price: c * _supply_volume(q),
                                 0.0 if price >= 0 else price * _supply_volume(lo))
    return Objective("cost_min", net, _energy_terms(net, energy_price), node_terms)


def profit_max(net: Network, purchase_prices: dict, sale_prices: dict, energy_price=0.0) -> Objective:
    """Negative profit: purchases plus energy minus revenue from demands."""
    obj = cost_min(net, purchase_prices, energy_price)
    obj.kind = "profit_max"
    for n, price in sale_prices.items():
        hi = net.nodes[n].intensity_bounds[1]
        prev = obj.node_terms.get(n)
        base = prev.fn if prev else (lambda p, q: 0.0)
        lower = (prev.lower if prev else 0.0) - price * max(hi, 0.0)
        obj.node_terms[n] = NodeTerm(lambda p, q, f=base, c=price: f(p, q) - c * max(q, 0.0), lower)
    return obj


def weighted_avg_gas_cost(net: Network, purchase_prices: dict) -> Objective:
    """Volume-weighted average purchase price of all supplied gas, money per Mm3."""
    def fn(net_, state, choices):
        vol = sum(_supply_volume(state.intensities[n]) for n in purchase_prices)
        if vol <= 0:
            return 0.0
        return sum(c * _supply_volume(state.intensities[n]) for n, c in purchase_prices.items()) / vol
    return Objective("weighted_avg_gas_cost", net,
                     global_terms=[GlobalTerm(fn, min(purchase_prices.values(), default=0.0))])


def specific_transport_cost(net: Network, energy_price: float, fixed_costs=None) -> Objective:
    """Station energy plus fixed cost per delivered Mm3."""
    fixed = sum((fixed_costs or {}).values())
    stations = [e for e in net.edges.values() if e.kind == "compressor_station" and e.choices]

    def fn(net_, state, choices):
        delivered = sum(max(q, 0.0) for q in state.intensities.values())
        if delivered <= 0:
            return 0.0
        energy = sum(e.choices[choices.get(e.id, e.choice)].rated_power for e in stations) * 24 * energy_price
        return (energy + fixed) / delivered
    return Objective("specific_transport_cost", net, global_terms=[GlobalTerm(fn, 0.0)])


def make_objective(kind: str, net: Network, gas: GasProperties | None = None, **params) -> Objective:
    """Build an objective by kind name (used by the scenario loader)."""
    if kind == "power_min":
        return power_min(net)
    if kind == "setpoint_deviation":
        return setpoint_deviation(net, params.get("setpoints", {}), params.get("weights"))
    if kind == "max_flow":
        return max_flow(net, params.get("nodes"))
    if kind == "cost_min":
        return cost_min(net, params.get("purchase_prices", {}), params.get("energy_price", 0.0))
    if kind == "profit_max":
        return profit_max(net, params.get("purchase_prices", {}), params.get("sale_prices", {}),
                          params.get("energy_price", 0.0))
    if kind == "weighted_avg_gas_cost":
        return weighted_avg_gas_cost(net, params.get("purchase_prices", {}))
    if kind == "specific_transport_cost":
        return specific_transport_cost(net, params.get("energy_price", 0.0), params.get("fixed_costs"))
    raise ValueError(f"unknown objective kind {kind!r}")
