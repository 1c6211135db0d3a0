"""Convex separable min-cost flow: problem/solution types and the solver.

Linear instances go straight to the network simplex. Nonlinear convex costs
are replaced by secant interpolants on a breakpoint grid; each round adds,
per edge, the minimizer of the Lagrangian edge term at the current
potentials (a column-generation step), so the gap between the interpolant's
true cost (upper bound) and the dual function value (lower bound) shrinks.
A final Newton step on the KKT system of the active set removes the last
bit of interpolation error. Every answer is certified before it is returned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from ..errors import Infeasible, Unbounded
from ..network import Network, NetworkState, conservation_residual, natural_key
from .simplex import network_simplex

INF = math.inf


@dataclass
class FlowProblem:
    """Costs per edge and node intensities; supplies carry negative Q."""
    network: Network
    costs: dict
    intensities: dict | None = None

    def __post_init__(self):
        if self.intensities is None:
            self.intensities = {n: v.intensity for n, v in self.network.nodes.items()}
        missing = [e for e in self.network.edges if e not in self.costs]
        if missing:
            raise ValueError(f"edges without cost: {missing[:10]}")
        total = math.fsum(self.intensities[n] for n in self.network.nodes)
        scale = max([1.0] + [abs(v) for v in self.intensities.values()])
        if abs(total) > 1e-9 * scale:
            raise ValueError(f"intensities do not balance (sum {total:.6g})")
        for eid in self.network.edges:
            lo, hi = self.bounds(eid)
            if lo > hi:
                raise ValueError(f"edge {eid}: flow bounds and cost domain do not intersect")

    def bounds(self, eid) -> tuple:
        a, b = self.network.edges[eid].flow_bounds
        c, d = self.costs[eid].domain
        return max(a, c), min(b, d)

    def objective(self, flows) -> float:
        return math.fsum(self.costs[e].value(flows[e]) for e in self.network.edges)

    def supply(self, node) -> float:
        """Net amount that must leave the node through its edges."""
        return -self.intensities[node]


@dataclass
class FlowSolution:
    flows: dict
    potentials: dict
    objective: float
    status: str = "optimal"
    info: dict = field(default_factory=dict)

    def tension(self, net: Network, eid) -> float:
        e = net.edges[eid]
        return self.potentials[e.i] - self.potentials[e.k]


# -- feasibility --------------------------------------------------------------------
def _base_flow(lo, hi) -> float:
    if math.isfinite(lo):
        return lo
    if math.isfinite(hi):
        return hi
    return 0.0


def infeasibility_witness(problem: FlowProblem, tol=1e-9):
    """Node set whose net supply exceeds the capacity leaving it, or None.

    Found as the source side of a minimum s-t cut of the shifted network.
    """
    net = problem.network
    g = nx.DiGraph()
    b = {n: problem.supply(n) for n in net.nodes}
    g.add_nodes_from(["__s", "__t"])
    g.add_nodes_from(net.nodes)

    def add(u, v, c):
        if c <= 0:
            return
        if g.has_edge(u, v):
            if "capacity" in g[u][v]:
                if math.isinf(c):
                    del g[u][v]["capacity"]
                else:
                    g[u][v]["capacity"] += c
        elif math.isinf(c):
            g.add_edge(u, v)
        else:
            g.add_edge(u, v, capacity=c)

    for eid, e in net.edges.items():
        lo, hi = problem.bounds(eid)
        q0 = _base_flow(lo, hi)
        b[e.i] -= q0
        b[e.k] += q0
        add(e.i, e.k, hi - q0)
        add(e.k, e.i, q0 - lo)
    need = 0.0
    for n, v in b.items():
        if v > 0:
            g.add_edge("__s", n, capacity=v)
            need += v
        elif v < 0:
            g.add_edge(n, "__t", capacity=-v)
    if need == 0:
        return None
    value, (side, _) = nx.minimum_cut(g, "__s", "__t")
    if value >= need - tol * max(1.0, need):
        return None
    nodes = sorted((n for n in side if n != "__s"), key=natural_key)
    return {"nodes": nodes, "shortfall": need - value,
            "net_supply": math.fsum(problem.supply(n) for n in nodes)}


# -- linear layer ---------------------------------------------------------------------
def _expand(problem: FlowProblem, grids: dict):
    """Linear arcs for the simplex: per edge a base flow plus segment arcs."""
    net = problem.network
    idx = {n: j for j, n in enumerate(net.nodes)}
    supply = [problem.supply(n) for n in net.nodes]
    arcs, owner, base, const = [], [], {}, 0.0
    for eid, e in net.edges.items():
        cost = problem.costs[eid]
        lo, hi = problem.bounds(eid)
        i, k = idx[e.i], idx[e.k]
        if eid in grids:
            xs = grids[eid]
            q0 = xs[0]
            const += cost.value(q0)
            for x1, x2 in zip(xs, xs[1:]):
                slope = (cost.value(x2) - cost.value(x1)) / (x2 - x1)
                arcs.append((i, k, slope, x2 - x1))
                owner.append((eid, 1))
        else:   # linear cost, possibly unbounded in either direction
            c = cost.coefficients[0]
            q0 = _base_flow(lo, hi)
            const += c * q0
            if hi > q0:
                arcs.append((i, k, c, hi - q0))
                owner.append((eid, 1))
            if q0 > lo:
                arcs.append((k, i, -c, q0 - lo))
                owner.append((eid, -1))
        base[eid] = q0
        supply[i] -= q0
        supply[k] += q0
    return idx, supply, arcs, owner, base, const


def _solve_linear(problem, grids):
    idx, supply, arcs, owner, base, const = _expand(problem, grids)
    x, pi = network_simplex(len(idx), supply, arcs)
    flows = dict(base)
    for (eid, d), v in zip(owner, x):
        flows[eid] += d * v
    pots = {n: pi[j] for n, j in idx.items()}
    # shift so the potentials are centred on zero (only differences matter)
    mean = math.fsum(pots.values()) / len(pots)
    pots = {n: p - mean for n, p in pots.items()}
    return flows, pots


# -- dual bound -----------------------------------------------------------------------
def dual_value(problem: FlowProblem, potentials, boxes) -> float:
    """Lagrangian dual function at the given potentials (a lower bound)."""
    net = problem.network
    tot = [problem.supply(n) * potentials[n] for n in net.nodes]
    for eid, e in net.edges.items():
        cost = problem.costs[eid]
        lo, hi = boxes[eid]
        t = potentials[e.i] - potentials[e.k]
        if cost.kind == "linear":
            r = cost.coefficients[0] - t
            if abs(r) <= 1e-12 * max(1.0, abs(t)):
                continue
            end = lo if r > 0 else hi
            if math.isinf(end):
                return -INF
            tot.append(r * end)
        else:
            q = cost.inverse_derivative(t, lo, hi)
            tot.append(cost.value(q) - t * q)
    return math.fsum(tot)


def _box(problem, eid, B):
    lo, hi = problem.bounds(eid)
    return (lo if math.isfinite(lo) else -B, hi if math.isfinite(hi) else B)


def _artificial_box(problem) -> float:
    s = sum(max(0.0, problem.supply(n)) for n in problem.network.nodes)
    fin = [abs(x) for eid in problem.network.edges for x in problem.bounds(eid) if math.isfinite(x)]
    return 10.0 * (s + sum(fin)) + 10.0


# -- solver ---------------------------------------------------------------------------
def solve_mincost(problem: FlowProblem, tol=1e-8, max_rounds=200, polish=True,
                  cert_tol=1e-6) -> FlowSolution:
    """Minimize the sum of edge costs subject to conservation and bounds.

    `tol` is the relative duality-gap target of the breakpoint refinement;
    `cert_tol` the tolerance of the final optimality certificate.
    """
    from .certify import verify_optimality

    net = problem.network
    witness = infeasibility_witness(problem)
    if witness is not None:
        raise Infeasible(f"supply of {len(witness['nodes'])} node(s) cannot leave through the cut "
                         f"(short by {witness['shortfall']:.6g})", witness)
    nonlinear = [e for e in net.edges if problem.costs[e].kind != "linear"]
    if not nonlinear:
        flows, pots = _solve_linear(problem, {})
        sol = FlowSolution(flows, pots, problem.objective(flows), "optimal",
                           {"rounds": 0, "gap": 0.0, "method": "network-simplex"})
        sol.info["violations"] = len(verify_optimality(problem, sol, cert_tol))
        return sol

    B = _artificial_box(problem)
    for _ in range(8):
        boxes = {e: _box(problem, e, B) for e in net.edges}
        try:
            sol = _refine(problem, nonlinear, boxes, tol, max_rounds)
        except Unbounded:
            raise
        artificial = []
        for e in nonlinear:
            lo, hi = problem.bounds(e)
            q = sol.flows[e]
            if (math.isinf(lo) and q <= -B * (1 - 1e-9)) or (math.isinf(hi) and q >= B * (1 - 1e-9)):
                artificial.append(e)
        if not artificial:
            break
        B *= 10.0
    else:
        raise Unbounded("flows keep growing with the artificial bound")

    if polish:
        pol = kkt_polish(problem, sol, boxes)
        if pol is not None and not verify_optimality(problem, pol, cert_tol) \
                and pol.objective <= sol.objective + 1e-12 * max(1.0, abs(sol.objective)):
            pol.info = dict(sol.info, polished=True)
            sol = pol
    sol.info["violations"] = len(verify_optimality(problem, sol, cert_tol))
    return sol


def _refine(problem, nonlinear, boxes, tol, max_rounds) -> FlowSolution:
    grids = {}
    for eid in nonlinear:
        cost = problem.costs[eid]
        lo, hi = boxes[eid]
        if lo == hi:
            grids[eid] = [lo, hi + 0.0]
            continue
        if cost.kind == "piecewise_convex":
            pts = [x for x in cost.breakpoints if lo < x < hi]
        else:
            pts = list(np.linspace(lo, hi, 9)[1:-1])
            if lo < 0 < hi:
                pts.append(0.0)
        grids[eid] = sorted(set([lo, hi] + pts))
    gap, rounds = INF, 0
    best = None
    for rounds in range(1, max_rounds + 1):
        usable = {e: g for e, g in grids.items() if len(g) > 1 and g[-1] > g[0]}
        flows, pots = _solve_linear(problem, usable)
        for e, g in grids.items():
            if e not in usable:
                flows[e] = g[0]
        ub = problem.objective(flows)
        lb = dual_value(problem, pots, boxes)
        if best is None or ub < best[0]:
            best = (ub, flows, pots)
        gap = (best[0] - lb) / max(1.0, abs(best[0]))
        if gap <= tol:
            break
        added = 0
        for eid in nonlinear:
            cost = problem.costs[eid]
            if cost.kind == "piecewise_convex":
                continue
            e = problem.network.edges[eid]
            t = pots[e.i] - pots[e.k]
            lo, hi = boxes[eid]
            q = cost.inverse_derivative(t, lo, hi)
            g = grids[eid]
            span = max(1.0, hi - lo) if math.isfinite(hi - lo) else 1.0
            if min(abs(q - x) for x in g) > 1e-13 * span:
                g.append(q)
                g.sort()
                added += 1
        if not added:
            break
    ub, flows, pots = best
    return FlowSolution(flows, pots, ub, "optimal",
                        {"rounds": rounds, "gap": max(gap, 0.0), "method": "pwl-refinement"})


def kkt_polish(problem: FlowProblem, sol: FlowSolution, boxes=None, iters=30):
    """Newton iteration on the KKT system with the active set of `sol` frozen.

    Edges at a bound (or on a kink of a piecewise cost) keep their flow; the
    others satisfy F'(q) = p_i - p_k; conservation holds at every node.
    Returns None when the step leaves the bounds or does not converge.
    """
    net = problem.network
    nodes = list(net.nodes)
    idx = {n: j for j, n in enumerate(nodes)}
    edges = list(net.edges)
    flows = dict(sol.flows)
    free = []
    for eid in edges:
        cost = problem.costs[eid]
        lo, hi = problem.bounds(eid)
        q = flows[eid]
        sc = 1e-9 * max(1.0, abs(q))
        if q <= lo + sc or q >= hi - sc or cost.is_kink(q, sc):
            continue
        free.append(eid)
    nf, nn = len(free), len(nodes)
    pots = np.array([sol.potentials[n] for n in nodes])
    q = np.array([flows[e] for e in free])
    A = np.zeros((nn, nf))
    for j, eid in enumerate(free):
        e = net.edges[eid]
        A[idx[e.i], j] = 1.0
        A[idx[e.k], j] = -1.0
    fixed_out = np.zeros(nn)
    for eid in edges:
        if eid not in free:
            e = net.edges[eid]
            fixed_out[idx[e.i]] += flows[eid]
            fixed_out[idx[e.k]] -= flows[eid]
    b = np.array([problem.supply(n) for n in nodes]) - fixed_out
    scale = max(1.0, float(np.max(np.abs(b))) if nn else 1.0)
    for _ in range(iters):
        grad = np.array([problem.costs[e].derivative(x) for e, x in zip(free, q)])
        hess = np.array([problem.costs[e].second_derivative(x) for e, x in zip(free, q)])
        r1 = grad - A.T @ pots
        r2 = A @ q - b
        if max(np.max(np.abs(r1), initial=0.0), np.max(np.abs(r2), initial=0.0)) < 1e-14 * scale:
            break
        K = np.block([[np.diag(hess), -A.T], [A, np.zeros((nn, nn))]])
        step = np.linalg.lstsq(K, -np.concatenate([r1, r2]), rcond=None)[0]
        q = q + step[:nf]
        pots = pots + step[nf:]
    for eid, x in zip(free, q):
        lo, hi = problem.bounds(eid)
        if x < lo or x > hi:
            return None
        flows[eid] = float(x)
    pd = {n: float(pots[idx[n]]) for n in nodes}
    mean = math.fsum(pd.values()) / nn
    pd = {n: p - mean for n, p in pd.items()}
    state = NetworkState({}, dict(problem.intensities), flows)
    if max(abs(v) for v in conservation_residual(net, state).values()) > 1e-9:
        return None
    return FlowSolution(flows, pd, problem.objective(flows), "optimal", {})
