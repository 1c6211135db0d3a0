import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasnetopt.errors import Infeasible, NonDifferentiable, UnbalancedFlow
from gasnetopt.mincost import (EdgeCost, FlowProblem, FlowSolution, potentials_from_flow, solve_mincost,
                               verify_optimality)
from gasnetopt.network import Edge, Network, Node

from helpers import cvx_oracle, oracle_instances, perturb_on_cycle, random_flow_problem


def problem(nodes, edges, costs):
    return FlowProblem(Network([Node(n, intensity=q) for n, q in nodes], edges), costs)


# supplies are negative intensities throughout (flow leaving a node plus its intensity is zero)
def test_two_nodes_forced():
    p = problem([("a", -5.0), ("b", 5.0)], [Edge("e", "a", "b", flow_bounds=(0, 10))], {"e": EdgeCost.linear(1.0)})
    s = solve_mincost(p)
    assert s.flows["e"] == pytest.approx(5.0) and s.objective == pytest.approx(5.0)
    assert verify_optimality(p, s) == []


def test_triangle_cheaper_route():
    p = problem([("a", -4.0), ("b", 0.0), ("c", 4.0)],
                [Edge("ac", "a", "c", flow_bounds=(0, 10)), Edge("ab", "a", "b", flow_bounds=(0, 10)),
                 Edge("bc", "b", "c", flow_bounds=(0, 10))],
                {"ac": EdgeCost.linear(1.0), "ab": EdgeCost.linear(1.0), "bc": EdgeCost.linear(1.0)})
    s = solve_mincost(p)
    assert s.flows["ac"] == pytest.approx(4.0) and s.objective == pytest.approx(4.0)


def test_infeasible_with_witness():
    p = problem([("a", -5.0), ("b", 5.0)], [Edge("e", "a", "b", flow_bounds=(0, 3))], {"e": EdgeCost.linear(1.0)})
    with pytest.raises(Infeasible) as ei:
        solve_mincost(p)
    w = ei.value.witness
    assert w["shortfall"] == pytest.approx(2.0)


def test_quadratic_random_against_oracle():
    for p, v, _, _ in oracle_instances(30, seed=11, kinds=("quadratic",)):
        s = solve_mincost(p)
        assert s.objective == pytest.approx(v, rel=1e-6, abs=1e-6)
        assert verify_optimality(p, s) == []


def test_ohms_law_tension():
    for p, _, _, _ in oracle_instances(20, seed=5, kinds=("quadratic",)):
        s = solve_mincost(p)
        for eid, e in p.network.edges.items():
            lo, hi = p.bounds(eid)
            q = s.flows[eid]
            if lo + 1e-6 < q < hi - 1e-6:
                c, b = p.costs[eid].coefficients
                t = s.potentials[e.i] - s.potentials[e.k]
                assert t == pytest.approx(2 * c * q + b, abs=1e-6)


def test_strictly_convex_flows_match_oracle():
    # quadratic costs have a unique optimum, so the flows themselves must agree
    for p, _, flows, _ in oracle_instances(30, seed=3, kinds=("quadratic",)):
        s = solve_mincost(p)
        for e in p.network.edges:
            assert s.flows[e] == pytest.approx(flows[e], abs=1e-4)


def test_perturbation_on_exact_edge():
    # triangle: quadratic edge in parallel with a two-edge linear route, all interior
    p = problem([("a", -4.0), ("b", 0.0), ("c", 4.0)],
                [Edge("q", "a", "c"), Edge("ab", "a", "b", flow_bounds=(-10, 10)),
                 Edge("bc", "b", "c", flow_bounds=(-10, 10))],
                {"q": EdgeCost.quadratic(0.5), "ab": EdgeCost.linear(1.0), "bc": EdgeCost.linear(0.5)})
    s = solve_mincost(p)
    assert verify_optimality(p, s) == []
    assert s.flows["q"] == pytest.approx(1.5)        # marginal 0.5*2*q equals 1.5 on the linear route
    tol = 1e-6
    moved = dict(s.flows)
    moved["q"] += 10 * tol
    moved["ab"] -= 10 * tol
    moved["bc"] -= 10 * tol
    viol = verify_optimality(p, FlowSolution(moved, s.potentials, math.nan), tol)
    assert [v.edge for v in viol] == ["q"]


def test_perturbed_solutions_flagged():
    rng = np.random.default_rng(17)
    done = 0
    for p, _, _, _ in oracle_instances(200, seed=17):
        s = solve_mincost(p)
        pert = perturb_on_cycle(p, s.flows, rng, 1e-2)
        if pert is None:
            continue
        flows, target = pert
        viol = verify_optimality(p, FlowSolution(flows, s.potentials, math.nan), 1e-6)
        assert target in {v.edge for v in viol}
        done += 1
    assert done >= 50


def test_unbalanced_refused():
    p = problem([("a", -5.0), ("b", 5.0)], [Edge("e", "a", "b")], {"e": EdgeCost.linear(1.0)})
    with pytest.raises(UnbalancedFlow):
        verify_optimality(p, FlowSolution({"e": 4.0}, {"a": 0.0, "b": 0.0}, 4.0))


def test_linear_tree_tension_equals_cost():
    net = Network([Node("a", intensity=-3.0), Node("b"), Node("c", intensity=3.0)],
                  [Edge("ab", "a", "b"), Edge("bc", "b", "c")])
    p = FlowProblem(net, {"ab": EdgeCost.linear(2.0), "bc": EdgeCost.linear(0.7)})
    pot = potentials_from_flow(p, {"ab": 3.0, "bc": 3.0})
    assert pot["a"] - pot["b"] == pytest.approx(2.0)
    assert pot["b"] - pot["c"] == pytest.approx(0.7)


def test_cubic_tension_is_bernoulli():
    net = Network([Node("a", intensity=-3.0), Node("b", intensity=3.0)], [Edge("ab", "a", "b")])
    p = FlowProblem(net, {"ab": EdgeCost.cubic(0.4)})
    pot = potentials_from_flow(p, {"ab": 3.0})
    assert pot["a"] - pot["b"] == pytest.approx(3 * 0.4 * 9.0)


def test_kink_needs_a_side():
    net = Network([Node("a", intensity=-1.0), Node("b", intensity=1.0)], [Edge("ab", "a", "b")])
    p = FlowProblem(net, {"ab": EdgeCost.piecewise([(0, 0), (1, 1), (2, 3)])})
    with pytest.raises(NonDifferentiable):
        potentials_from_flow(p, {"ab": 1.0})
    pot = potentials_from_flow(p, {"ab": 1.0}, side="right")
    assert pot["a"] - pot["b"] == pytest.approx(2.0)


def test_nonconvex_rejected():
    with pytest.raises(ValueError):
        EdgeCost.piecewise([(0, 0), (1, 2), (2, 3)])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_tree_potentials_always_certify(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 8))
    q = rng.uniform(-5, 5, n)
    q -= q.mean()
    nodes = [Node(str(j), intensity=float(q[j])) for j in range(n)]
    edges = [Edge(f"e{j}", str(int(rng.integers(0, j))), str(j)) for j in range(1, n)]
    kinds = [EdgeCost.linear(1.3), EdgeCost.quadratic(0.7, 0.1), EdgeCost.cubic(0.2, -0.4)]
    p = FlowProblem(Network(nodes, edges), {e.id: kinds[int(rng.integers(3))] for e in edges})
    s = solve_mincost(p)
    pot = potentials_from_flow(p, s.flows, side="right")
    assert verify_optimality(p, FlowSolution(s.flows, pot, s.objective), 1e-7) == []


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000), st.floats(-50, 50))
def test_constant_shift_keeps_verdict(seed, shift):
    rng = np.random.default_rng(seed)
    p = random_flow_problem(rng)
    try:
        s = solve_mincost(p)
    except Infeasible:
        return
    moved = FlowSolution(s.flows, {n: v + shift for n, v in s.potentials.items()}, s.objective)
    assert verify_optimality(p, moved) == verify_optimality(p, s) == []


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000), st.floats(0.1, 10))
def test_cost_scaling(seed, alpha):
    rng = np.random.default_rng(seed)
    p = random_flow_problem(rng)
    try:
        s = solve_mincost(p)
    except Infeasible:
        return
    p2 = FlowProblem(p.network, {e: c.scaled(alpha) for e, c in p.costs.items()})
    s2 = solve_mincost(p2)
    assert s2.objective == pytest.approx(alpha * s.objective, rel=1e-6, abs=1e-6)
    assert p.objective(s2.flows) == pytest.approx(s.objective, rel=1e-6, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_reorientation_invariance(seed):
    from dataclasses import replace
    rng = np.random.default_rng(seed)
    p = random_flow_problem(rng)
    try:
        s = solve_mincost(p)
    except Infeasible:
        return
    flip = sorted(p.network.edges)[int(rng.integers(len(p.network.edges)))]
    e = p.network.edges[flip]
    lo, hi = e.flow_bounds
    net2 = p.network.with_edges(**{flip: replace(e, i=e.k, k=e.i, flow_bounds=(-hi, -lo))})
    costs = dict(p.costs)
    costs[flip] = costs[flip].reflected()
    s2 = solve_mincost(FlowProblem(net2, costs))
    assert s2.objective == pytest.approx(s.objective, rel=1e-6, abs=1e-6)


def test_random_infeasible_agree_with_oracle():
    rng = np.random.default_rng(99)
    seen = 0
    for _ in range(80):
        p = random_flow_problem(rng)
        v, status, _, _ = cvx_oracle(p)
        if status != "infeasible":
            continue
        seen += 1
        with pytest.raises(Infeasible):
            solve_mincost(p)
    assert seen > 0
