import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasnetopt.errors import DanglingEdge, Disconnected, MissingValue, SelfLoop
from gasnetopt.network import Edge, NetworkState, Node, build_network, conservation_residual, spanning_tree

from helpers import random_connected


def two_nodes(qa=-5.0, qb=5.0):
    return build_network([Node("A", intensity=qa), Node("B", intensity=qb)], [Edge("p", "A", "B")])


def test_minimal_graph():
    net = two_nodes()
    assert len(net.nodes) == 2 and len(net.edges) == 1


def test_dangling_edge():
    with pytest.raises(DanglingEdge):
        build_network([Node("A"), Node("B")], [Edge("p", "A", "B"), Edge("q", "A", "C")])


def test_self_loop():
    with pytest.raises(SelfLoop):
        build_network([Node("A"), Node("B")], [Edge("p", "A", "B"), Edge("q", "A", "A")])


def test_disconnected():
    with pytest.raises(Disconnected):
        build_network([Node("A"), Node("B"), Node("C")], [Edge("p", "A", "B")])


def test_residual_zero_case():
    net = two_nodes(0.0, 0.0)
    st_ = NetworkState({}, {"A": 0.0, "B": 0.0}, {"p": 0.0})
    assert conservation_residual(net, st_) == {"A": 0.0, "B": 0.0}


def test_residual_single_edge_balance():
    net = two_nodes()
    res = conservation_residual(net, NetworkState({}, {"A": -5.0, "B": 5.0}, {"p": 5.0}))
    assert res == {"A": 0.0, "B": 0.0}


def test_residual_sign_by_substitution():
    net = two_nodes()
    res = conservation_residual(net, NetworkState({}, {"A": -5.0, "B": 4.0}, {"p": 5.0}))
    # out of B: -5, plus Q_B = 4
    assert res["B"] == -1.0 and res["A"] == 0.0


def test_residual_missing_value():
    net = two_nodes()
    with pytest.raises(MissingValue):
        conservation_residual(net, NetworkState({}, {"A": -5.0}, {"p": 5.0}))


def test_tree_has_no_chords():
    net = build_network([Node(n) for n in "ABCD"], [Edge("1", "A", "B"), Edge("2", "B", "C"), Edge("3", "B", "D")])
    assert spanning_tree(net, "A").chords == []


def test_ring_has_one_chord():
    n = 7
    ids = [str(j) for j in range(n)]
    net = build_network([Node(i) for i in ids], [Edge(f"e{j}", ids[j], ids[(j + 1) % n]) for j in range(n)])
    assert len(spanning_tree(net, "0").chords) == 1


def test_fixture_chords(ring_net):
    tr = spanning_tree(ring_net, "48")
    assert len(tr.chords) == 2
    assert {ring_net.edges[c].section for c in tr.chords} == {"29", "35"}
    # the chord of section 29 closes at node 17, the one of section 35 joins 22 and 24
    assert frozenset(("22", "24")) in {frozenset((ring_net.edges[c].i, ring_net.edges[c].k)) for c in tr.chords}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_decomposition_counts(seed):
    net = random_connected(seed)
    tr = spanning_tree(net, sorted(net.nodes)[0])
    assert len(tr.tree_edges) == len(net.nodes) - 1
    assert len(tr.chords) == len(net.edges) - len(net.nodes) + 1
    for c, cyc in tr.fundamental_cycles.items():
        assert [e for e, _ in cyc if e in tr.chords] == [c]


def _random_state(net, rng):
    flows = {e: rng.uniform(-10, 10) for e in net.edges}
    q = {n: rng.uniform(-10, 10) for n in net.nodes}
    return NetworkState({}, q, flows)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_residual_linear(seed, a, b):
    import random
    rng = random.Random(seed)
    net = random_connected(seed)
    s1, s2 = _random_state(net, rng), _random_state(net, rng)
    mix = NetworkState({}, {n: a * s1.intensities[n] + b * s2.intensities[n] for n in net.nodes},
                       {e: a * s1.flows[e] + b * s2.flows[e] for e in net.edges})
    r1, r2, r = (conservation_residual(net, s) for s in (s1, s2, mix))
    for n in net.nodes:
        assert math.isclose(r[n], a * r1[n] + b * r2[n], abs_tol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_flip_orientation_keeps_residual(seed):
    import random
    from dataclasses import replace
    rng = random.Random(seed)
    net = random_connected(seed)
    s = _random_state(net, rng)
    flip = rng.choice(sorted(net.edges))
    e = net.edges[flip]
    net2 = net.with_edges(**{flip: replace(e, i=e.k, k=e.i)})
    s2 = s.copy()
    s2.flows[flip] = -s.flows[flip]
    r1, r2 = conservation_residual(net, s), conservation_residual(net2, s2)
    assert all(math.isclose(r1[n], r2[n], abs_tol=1e-12) for n in net.nodes)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_balanced_state_sums_to_zero(seed):
    """Build a balanced state from arbitrary flows; then the intensities sum to zero."""
    import random
    rng = random.Random(seed)
    net = random_connected(seed)
    flows = {e: rng.uniform(-10, 10) for e in net.edges}
    zero = conservation_residual(net, NetworkState({}, {n: 0.0 for n in net.nodes}, flows))
    q = {n: -r for n, r in zero.items()}
    assert abs(math.fsum(q.values())) < 1e-9
