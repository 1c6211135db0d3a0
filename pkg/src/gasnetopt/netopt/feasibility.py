"""Exact pressure feasibility on a spanning tree with fixed flows.

Every tree edge maps the parent pressure P to a band [lo(P), hi(P)] of child
pressures, with lo and hi non-decreasing in P. A bottom-up pass computes, per
node, the interval of pressures for which its whole subtree can be kept inside
the pressure windows; a top-down pass then picks pressures and recovers the
continuous controls (station throttles, valve set-points).

This is exact when chord cycles contain only pipes, because their closure
then depends on flows alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import ChokedFlow, ClosedValveFlow, InvalidScheme
from ..hydraulics import GasProperties, capped_ratio, edge_pipe_coefficient

EMPTY = (math.inf, -math.inf)
EPS = 1e-9


def _is_empty(iv):
    return iv[0] > iv[1] + EPS


def _meet(a, b):
    return (max(a[0], b[0]), min(a[1], b[1]))


@dataclass
class EdgeMap:
    """Band map of one tree edge seen from its parent node."""
    kind: str            # pipe | ratio | valve_down | valve_up | identity
    a: float = 0.0       # pipe: signed k*l*q|q| in the parent->child direction
    lo: float = 1.0      # ratio/valve bounds
    hi: float = 1.0

    def band(self, p):
        if self.kind == "pipe":
            r = p * p - self.a
            if r <= 0:
                return EMPTY
            v = math.sqrt(r)
            return (v, v)
        if self.kind == "ratio":
            return (p * self.lo, p * self.hi)
        if self.kind == "valve_down":     # child is the valve outlet
            if p < self.lo - EPS:
                return EMPTY
            return (self.lo, min(self.hi, p))
        if self.kind == "valve_up":       # child is the valve inlet
            if p < self.lo - EPS or p > self.hi + EPS:
                return EMPTY
            return (p, math.inf)
        return (p, p)

    def preimage(self, iv):
        """Parent pressures whose band meets the child interval `iv`."""
        A, B = iv
        if _is_empty(iv):
            return EMPTY
        if self.kind == "pipe":
            # A <= sqrt(P^2 - a) <= B  <=>  A^2 + a <= P^2 <= B^2 + a
            hb = B * B + self.a
            if hb <= 0:
                return EMPTY
            return (math.sqrt(max(max(A, EPS) ** 2 + self.a, 0.0)), math.sqrt(hb))
        if self.kind == "ratio":
            return (A / self.hi, B / self.lo)
        if self.kind == "valve_down":
            if self.lo > B + EPS or self.hi < A - EPS:
                return EMPTY
            return (max(A, self.lo), math.inf)
        if self.kind == "valve_up":
            return (self.lo, min(self.hi, B))
        return (A, B)


def edge_map(edge, parent, q_parent_to_child, gas, choice=None, ratio_box=None):
    """Build the band map of `edge` oriented from `parent`.

    `ratio_box` overrides the achievable ratio interval of a station, e.g. the
    relaxed envelope of its unassigned choices.
    """
    kind = edge.kind
    if kind == "pipe":
        k = edge_pipe_coefficient(edge, gas, q_parent_to_child)
        q = q_parent_to_child
        return EdgeMap("pipe", a=k * edge.pipe.length * q * abs(q))
    forward = parent == edge.i
    if kind == "compressor_station":
        if ratio_box is None:
            ratio_box = station_ratio_box(edge, q_parent_to_child if forward else -q_parent_to_child,
                                          gas, choice)
        lo, hi = ratio_box
        return EdgeMap("ratio", lo=lo, hi=hi) if forward else EdgeMap("ratio", lo=1 / hi, hi=1 / lo)
    if kind == "control_valve":
        lo, hi = edge.control_bounds
        q = q_parent_to_child if forward else -q_parent_to_child
        if q < -EPS:
            raise InvalidScheme(f"control valve {edge.id} cannot pass reverse flow")
        return EdgeMap("valve_down" if forward else "valve_up", lo=lo, hi=hi)
    if kind == "shutoff_valve" and edge.choices:
        c = edge.choice if choice is None else choice
        if edge.choices[c] == "closed" and abs(q_parent_to_child) > EPS:
            raise ClosedValveFlow(f"valve {edge.id} is closed but carries flow")
    return EdgeMap("identity")


def station_ratio_box(edge, flow, gas, choice=None):
    """Achievable ratio interval [S_min, S_cap] of a station for its flow."""
    sch = edge.choices[edge.choice if choice is None else choice]
    if sch.is_bypass:
        return (1.0, 1.0)
    cap_override = edge.side["ratio"][1] if edge.side and "ratio" in edge.side else None
    s_cap = capped_ratio(flow, gas, sch, cap_override)
    ulo, uhi = edge.control_bounds
    return (1 + ulo * (s_cap - 1), 1 + uhi * (s_cap - 1))


@dataclass
class TreeFeasibility:
    feasible: bool
    sets: dict           # node -> feasible pressure interval of its subtree
    failing: list        # nodes whose set became empty (deepest first)


def tree_feasibility(net, tree, flows, gas: GasProperties, root_pressure, choices=None,
                     ratio_boxes=None, windows=None, maps=None) -> TreeFeasibility:
    """Bottom-up pass. `ratio_boxes` maps station ids to relaxed ratio intervals."""
    choices = choices or {}
    ratio_boxes = ratio_boxes or {}
    windows = windows or {}
    sets = {}
    failing = []
    if maps is None:
        maps = tree_maps(net, tree, flows, gas, choices, ratio_boxes)
    for v in reversed(tree.order):
        w = windows.get(v, net.nodes[v].pressure_bounds)
        iv = (max(w[0], EPS), w[1])
        sets[v] = iv
    children = tree.children()
    for v in reversed(tree.order):
        iv = sets[v]
        for c, eid in children[v]:
            m = maps[eid]
            if m is None:
                iv = EMPTY
            else:
                iv = _meet(iv, m.preimage(sets[c]))
        if _is_empty(iv) and not any(_is_empty(sets[c]) for c, _ in children[v]):
            failing.append(v)
        sets[v] = iv
    r = sets[tree.root]
    ok = not _is_empty(r) and r[0] - EPS <= root_pressure <= r[1] + EPS
    if not ok and not failing:
        failing.append(tree.root)
    return TreeFeasibility(ok, sets, failing)


def tree_maps(net, tree, flows, gas, choices=None, ratio_boxes=None):
    choices = choices or {}
    ratio_boxes = ratio_boxes or {}
    maps = {}
    for v in tree.order[1:]:
        p, eid = tree.parent[v]
        e = net.edges[eid]
        q = flows[eid] * e.sign_at(p)
        try:
            maps[eid] = edge_map(e, p, q, gas, choices.get(eid), ratio_boxes.get(eid))
        except (InvalidScheme, ChokedFlow, ClosedValveFlow):
            maps[eid] = None
    return maps


def assign_pressures(net, tree, feas: TreeFeasibility, maps, root_pressure, targets=None) -> dict:
    """Top-down pass: choose each child pressure inside band and subtree set.

    Picks the value nearest to `targets[node]` when given, else the midpoint.
    """
    targets = targets or {}
    pressures = {tree.root: float(root_pressure)}
    for v in tree.order[1:]:
        p, eid = tree.parent[v]
        band = maps[eid].band(pressures[p])
        lo, hi = _meet(band, feas.sets[v])
        if lo > hi:     # numerical slack only
            lo = hi = min(max(band[0], feas.sets[v][0]), feas.sets[v][1])
        if v in targets:
            val = min(max(targets[v], lo), hi)
        elif math.isinf(hi):
            val = lo
        else:
            val = 0.5 * (lo + hi)
        pressures[v] = val
    return pressures


def controls_from_pressures(net, pressures, flows, gas, choices=None) -> dict:
    """Recover station throttles and valve set-points from a pressure profile."""
    choices = choices or {}
    out = {}
    for eid, e in net.edges.items():
        if e.kind == "compressor_station":
            sch = e.choices[choices.get(eid, e.choice)]
            if sch.is_bypass:
                out[eid] = e.control if e.control is not None else 1.0
                continue
            cap = e.side["ratio"][1] if e.side and "ratio" in e.side else None
            s_cap = capped_ratio(flows[eid], gas, sch, cap)
            s = pressures[e.k] / pressures[e.i]
            u = 1.0 if s_cap <= 1 else (s - 1) / (s_cap - 1)
            out[eid] = min(max(u, e.control_bounds[0]), e.control_bounds[1])
        elif e.kind == "control_valve":
            out[eid] = min(max(pressures[e.k], e.control_bounds[0]), e.control_bounds[1])
    return out
