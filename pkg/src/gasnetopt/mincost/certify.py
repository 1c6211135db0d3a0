"""Complementary-slackness certificate and potentials from a flow."""
from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import NonDifferentiable, UnbalancedFlow
from ..network import NetworkState, TreeDecomposition, conservation_residual, spanning_tree
from .solver import FlowProblem, FlowSolution


@dataclass(frozen=True)
class Violation:
    edge: str
    kind: str        # "bound", "lower", "upper" or "interior"
    amount: float    # how far the condition is missed


def verify_optimality(problem: FlowProblem, solution: FlowSolution, tol=1e-6) -> list:
    """Edges whose flow/tension pair breaks the optimality conditions.

    With t = p_i - p_k: a flow at its lower bound needs t <= F'+(q-),
    one at its upper bound t >= F'-(q+), and an interior flow
    F'-(q) <= t <= F'+(q). Inequalities are non-strict and `tol` is absolute.
    """
    net = problem.network
    state = NetworkState({}, dict(problem.intensities), dict(solution.flows))
    res = conservation_residual(net, state)
    worst = max((abs(v) for v in res.values()), default=0.0)
    if worst > tol:
        raise UnbalancedFlow(f"conservation residual {worst:.3g} exceeds {tol:.3g}")
    out = []
    for eid, e in net.edges.items():
        cost = problem.costs[eid]
        lo, hi = problem.bounds(eid)
        q = solution.flows[eid]
        t = solution.potentials[e.i] - solution.potentials[e.k]
        if q < lo - tol or q > hi + tol:
            out.append(Violation(eid, "bound", max(lo - q, q - hi)))
            continue
        at_lo = q <= lo + tol
        at_hi = q >= hi - tol
        if at_lo and at_hi:
            continue
        if at_lo:
            d = cost.right_derivative(lo)
            if t > d + tol:
                out.append(Violation(eid, "lower", t - d))
        elif at_hi:
            d = cost.left_derivative(hi)
            if t < d - tol:
                out.append(Violation(eid, "upper", d - t))
        else:
            dl, dr = cost.left_derivative(q), cost.right_derivative(q)
            miss = max(dl - t, t - dr)
            if miss > tol:
                out.append(Violation(eid, "interior", miss))
    return out


def potentials_from_flow(problem: FlowProblem, flows: dict, tree: TreeDecomposition | None = None,
                         side: str | None = None, root=None) -> dict:
    """Potentials with p_root = 0 and p_k = p_i - F'(q_ik) along tree edges.

    A tree-edge flow sitting on a kink has no unique derivative: pass
    side="left" or side="right" to pick one, otherwise NonDifferentiable.
    """
    net = problem.network
    if tree is None:
        tree = spanning_tree(net, root if root is not None else next(iter(net.nodes)))
    p = {tree.root: 0.0}
    for v in tree.order[1:]:
        par, eid = tree.parent[v]
        e = net.edges[eid]
        d = _derivative(problem, eid, flows[eid], side)
        if par == e.i:
            p[v] = p[par] - d
        else:
            p[v] = p[par] + d
    return p


def _derivative(problem, eid, q, side):
    cost = problem.costs[eid]
    lo, hi = problem.bounds(eid)
    dl, dr = cost.left_derivative(q), cost.right_derivative(q)
    if not math.isfinite(dl):
        return dr
    if not math.isfinite(dr):
        return dl
    if dl == dr:
        return dl
    if side == "left":
        return dl
    if side == "right":
        return dr
    raise NonDifferentiable(f"edge {eid}: flow {q} sits on a kink "
                            f"(left {dl:.6g}, right {dr:.6g})")
