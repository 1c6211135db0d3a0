from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasnetopt.contracts import (Interval, Nomination, build_contract, check_booking, expand, HydraulicProbe,
                                 integral_over, invoice, reduce, StationNetwork)
from gasnetopt.errors import (EmptyIntersection, HydraulicallyInfeasible, MissingPriceProcedure, OutOfInterval,
                              OverlappingIntervals, TierOverflow, UnroutableMeter)
from gasnetopt.network import Edge, Network, Node

DAY = "2026-01-15"


def two_tier():
    tiers = [{"interval": "[0,5]", "price": 100}, {"interval": "(5,10]", "price": 120}]
    return build_contract({"id": "C", "node": "n", "demand": tiers, "pressure": (40, 56)})


def parallel(p1=(40, 56), p2=(40, 56)):
    g = Network([Node("B"), Node("x"), Node("y")], [Edge("e1", "B", "x"), Edge("e2", "B", "y")])
    return build_contract({"id": "P", "graph": g, "boundary": "B",
                           "elements": {"e1": {"demand": [(0, 5, 100)], "pressure": [p1]},
                                        "e2": {"demand": [(0, 3, 100)], "pressure": [p2]}}})


# -- construction ------------------------------------------------------------------------------------
def test_simple_form():
    c = build_contract({"id": "S", "node": "22", "demand": (0, 10), "pressure": (40, 56), "price": 100})
    assert c.is_single_node and c.boundary == "22"
    (t,) = c.tiers
    assert t.interval == Interval(Decimal(0), Decimal(10)) and t.price.unit_price == Decimal(100)
    assert c.pressure_window == Interval(Decimal(40), Decimal(56))


def test_two_tiers_ordered():
    c = two_tier()
    assert [t.price.unit_price for t in c.tiers] == [Decimal(100), Decimal(120)]
    assert c.tiers[1].interval.lo_open


def test_overlap_rejected():
    with pytest.raises(OverlappingIntervals):
        build_contract({"id": "O", "node": "n", "demand": [(0, 5, 100), (4, 10, 120)]})


def test_missing_price_rejected():
    with pytest.raises(MissingPriceProcedure):
        build_contract({"id": "M", "node": "n", "demand": (0, 10)})


def test_interval_parse_and_membership():
    iv = Interval.parse("(40,60]")
    assert 40 not in iv and 60 in iv and Decimal("40.0001") in iv
    assert str(iv) == "(40,60]"


# -- reduce / expand -------------------------------------------------------------------------------
def test_single_node_reduce_is_identity():
    c = two_tier()
    assert reduce(c) is c


def test_parallel_tiers_add():
    r = reduce(parallel())
    (t,) = r.tiers
    assert (t.interval.lo, t.interval.hi) == (Decimal(0), Decimal(8))
    assert t.price.unit_price == Decimal(100)


def test_series_windows_disjoint():
    with pytest.raises(EmptyIntersection):
        reduce(parallel((40, 50), (55, 56)))


def test_reduce_idempotent_and_expand_roundtrip():
    c = parallel((40, 52), (45, 56))
    r = reduce(c)
    assert reduce(r) == r
    assert r.pressure_window == Interval(Decimal(45), Decimal(52))
    assert expand(r) == c


# -- booking ---------------------------------------------------------------------------------------
def test_booking_in_tier():
    c = build_contract({"id": "B", "node": "n", "demand": [(0, 5, 100)]})
    rep = check_booking(c, Nomination("B", DAY, 4))
    assert rep.tier == 1 and rep.quote == Decimal(400)


def test_booking_out_of_interval():
    with pytest.raises(OutOfInterval) as ei:
        check_booking(two_tier(), Nomination("C", DAY, 12))
    assert ei.value.nearest == Decimal(10)


def test_booking_pressure_window_outside():
    with pytest.raises(OutOfInterval):
        check_booking(two_tier(), Nomination("C", DAY, 3, pressure_window=(57, 60)))


def test_fixture_raised_demand_breaks_network(ring_scn, ring_net):
    from gasnetopt.scenario import scenario_contracts
    c = scenario_contracts(ring_scn)["C22"]
    probe = HydraulicProbe(ring_net, "48", 55.0)
    assert check_booking(c, Nomination(c.id, DAY, Decimal("46.07")), probe).hydraulic["feasible"]
    with pytest.raises(HydraulicallyInfeasible) as ei:
        check_booking(c, Nomination(c.id, DAY, 90), probe)
    assert ei.value.failing == ["100"]


# -- invoicing ---------------------------------------------------------------------------------------
def test_invoice_single_tier():
    c = build_contract({"id": "I", "node": "n", "demand": [(0, 5, 100)]})
    stmt, new = invoice(c, {"M1": 4}, period=DAY)
    assert stmt.total == Decimal(400)
    assert new.integral_quantities[DAY] == Decimal(4) and new.version == c.version + 1


def test_invoice_two_tiers():
    stmt, _ = invoice(two_tier(), {"M1": 8}, period=DAY)
    assert stmt.total == Decimal(5 * 100 + 3 * 120) == Decimal(860)
    assert not stmt.overflow


def test_invoice_overflow_flagged():
    stmt, _ = invoice(two_tier(), {"M1": 12}, period=DAY)
    assert [(i.volume, i.amount) for i in stmt.items] == [(5, 500), (5, 600), (2, 240)]
    assert stmt.total == Decimal(1340) and stmt.overflow
    assert stmt.lines()[-1] == "flag\tTierOverflow"
    with pytest.raises(TierOverflow):
        invoice(two_tier(), {"M1": 12}, period=DAY, strict=True)


def test_invoice_exact_cents():
    c = build_contract({"id": "E", "node": "n", "demand": [{"interval": "[0,1]", "price": "0.10"},
                                                       {"interval": "(1,3]", "price": "0.20"}]})
    stmt, _ = invoice(c, {"a": "0.1", "b": "0.2"}, period=DAY)
    assert stmt.total == Decimal("0.03")
    assert sum(i.volume for i in stmt.items) == Decimal("0.3")


def test_integral_quantities_accumulate():
    c = two_tier()
    _, c = invoice(c, {"M": 3}, period="2026-01-01")
    _, c = invoice(c, {"M": 2}, period="2026-01-02")
    _, c = invoice(c, {"M": 1}, period="2026-01-02")
    assert integral_over(c, ["2026-01-01", "2026-01-02"]) == Decimal(6)
    assert integral_over(c, ["2026-01-01"]) + integral_over(c, ["2026-01-02"]) == Decimal(6)


def test_station_meter_routing():
    g = Network([Node("in"), Node("a"), Node("b"), Node("out")],
                [Edge("m1", "in", "a"), Edge("v", "a", "b"), Edge("s", "b", "out")])
    stn = StationNetwork(g, {"m1": "meter", "v": "valve", "s": "service_pipe"}, ("m1",), ("in", "out"))
    assert stn.route("m1", "out") == ["a", "b", "out"]
    c = build_contract({"id": "R", "node": "out", "demand": [(0, 10, 100)]})
    stmt, _ = invoice(c, {"m1": 2}, stn, period=DAY)
    assert stmt.total == Decimal(200)
    with pytest.raises(UnroutableMeter):
        invoice(c, {"zz": 2}, stn, period=DAY)


# -- properties ----------------------------------------------------------------------------------------
money = st.decimals(min_value=0, max_value=500, places=2)
vol = st.decimals(min_value=0, max_value=100, places=3)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.decimals(min_value="0.5", max_value=20, places=2), money), min_size=1, max_size=4),
       st.data())
def test_booking_invoice_duality(tiers, data):
    lo, spec = Decimal(0), []
    for width, price in tiers:
        spec.append({"interval": f"{'[' if not spec else '('}{lo},{lo + width}]", "price": price})
        lo += width
    c = build_contract({"id": "D", "node": "n", "demand": spec})
    j = data.draw(st.integers(0, len(spec) - 1))
    iv = c.tiers[j].interval
    v = data.draw(st.decimals(min_value=iv.lo, max_value=iv.hi, places=3).filter(lambda x: x in iv))
    quote = check_booking(c, Nomination("D", DAY, v)).quote
    stmt, _ = invoice(c, {"M": v}, period=DAY)
    assert quote == stmt.total


@settings(max_examples=60, deadline=None)
@given(vol, vol)
def test_invoice_monotone_and_exact(a, b):
    lo_v, hi_v = sorted((a, b))
    t1, _ = invoice(two_tier(), {"M": lo_v}, period=DAY)
    t2, _ = invoice(two_tier(), {"M": hi_v}, period=DAY)
    assert t1.total <= t2.total
    assert sum(i.volume for i in t2.items) == hi_v
