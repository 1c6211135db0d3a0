"""Contracts as small networks: tiers, booking checks and invoicing.

Volumes and money use Decimal throughout, so tier fills and payments add up
exactly. A contract holds per-element interval sets (demand tiers with a
price each, pressure and calorific windows) and integral quantities per
accounting period (calendar day keys). Contracts are immutable: invoicing
returns a new version.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field, replace
from decimal import Decimal

import networkx as nx

from .errors import (EmptyIntersection, HydraulicallyInfeasible, MissingPriceProcedure,
                     OutOfInterval, OverlappingIntervals, TierOverflow, UnroutableMeter)
from .network import Network, Node, natural_key

QUANTITIES = ("demand", "pressure", "calorific")
ROLES = ("booking", "communication", "accounting", "operation")
STATION_KINDS = ("shutoff", "meter", "valve", "control_valve", "service_pipe")


def D(x) -> Decimal:
    """Decimal from int/str/float without binary noise (floats go through repr)."""
    if isinstance(x, Decimal):
        return x
    if isinstance(x, float):
        return Decimal(repr(x))
    return Decimal(x)


@dataclass(frozen=True)
class Interval:
    lo: Decimal
    hi: Decimal
    lo_open: bool = False
    hi_open: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lo", D(self.lo))
        object.__setattr__(self, "hi", D(self.hi))
        if self.lo > self.hi:
            raise ValueError(f"empty interval {self}")

    def __contains__(self, x) -> bool:
        x = D(x)
        if x < self.lo or x > self.hi:
            return False
        if self.lo_open and x == self.lo:
            return False
        if self.hi_open and x == self.hi:
            return False
        return True

    def overlaps(self, other: "Interval") -> bool:
        a, b = (self, other) if (self.lo, self.lo_open) <= (other.lo, other.lo_open) else (other, self)
        if a.hi < b.lo:
            return False
        if a.hi == b.lo:
            return not (a.hi_open or b.lo_open)
        return True

    def intersect(self, other: "Interval") -> "Interval":
        lo, lo_open = max((self.lo, self.lo_open), (other.lo, other.lo_open))
        hi, hi_open = min((self.hi, not self.hi_open), (other.hi, not other.hi_open))
        hi_open = not hi_open
        if lo > hi or (lo == hi and (lo_open or hi_open)):
            raise EmptyIntersection(f"{self} and {other} do not intersect")
        return Interval(lo, hi, lo_open, hi_open)

    def clamp(self, x) -> Decimal:
        return min(max(D(x), self.lo), self.hi)

    def __str__(self):
        return f"{'(' if self.lo_open else '['}{self.lo},{self.hi}{')' if self.hi_open else ']'}"

    @classmethod
    def parse(cls, text: str) -> "Interval":
        t = text.strip()
        if len(t) < 5 or t[0] not in "[(" or t[-1] not in "])" or "," not in t:
            raise ValueError(f"bad interval {text!r}")
        lo, hi = t[1:-1].split(",")
        return cls(D(lo.strip()), D(hi.strip()), t[0] == "(", t[-1] == ")")


@dataclass(frozen=True)
class PriceProcedure:
    """Money for a volume: unit_price * volume + fixed, with an optional quality factor."""
    unit_price: Decimal
    fixed: Decimal = Decimal(0)
    reference_calorific: Decimal | None = None

    def __post_init__(self):
        object.__setattr__(self, "unit_price", D(self.unit_price))
        object.__setattr__(self, "fixed", D(self.fixed))

    def __call__(self, volume, quality=None) -> Decimal:
        money = self.unit_price * D(volume) + (self.fixed if D(volume) > 0 else 0)
        if self.reference_calorific is not None and quality is not None:
            money = money * D(quality) / D(self.reference_calorific)
        return money


@dataclass(frozen=True)
class Tier:
    interval: Interval
    price: PriceProcedure

    @property
    def capacity(self) -> Decimal:
        return self.interval.hi - self.interval.lo


@dataclass(frozen=True)
class ElementIntervals:
    """Ordered interval sets of one contract element (node or edge)."""
    demand: tuple = ()
    pressure: tuple = ()
    calorific: tuple = ()

    def validate(self, where=""):
        for name in QUANTITIES:
            seq = getattr(self, name)
            ivs = [t.interval if isinstance(t, Tier) else t for t in seq]
            for a, b in zip(ivs, ivs[1:]):
                if a.overlaps(b) or (b.lo, b.lo_open) < (a.lo, a.lo_open):
                    raise OverlappingIntervals(f"{where} {name}: {a} and {b} overlap or are out of order")
        for t in self.demand:
            if not isinstance(t, Tier) or t.price is None:
                raise MissingPriceProcedure(f"{where}: every demand tier needs a price procedure")


@dataclass(frozen=True, eq=False)
class ContractNetwork:
    id: str
    graph: Network
    boundary: str
    elements: dict                        # element id -> ElementIntervals
    integral_quantities: dict = field(default_factory=dict)   # period -> Decimal
    role_edges: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)                 # nominal demand/pressure values
    version: int = 0
    detail: "ContractNetwork | None" = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.boundary not in self.graph.nodes:
            raise ValueError(f"contract {self.id}: boundary {self.boundary!r} not in its graph")
        for eid, el in self.elements.items():
            if eid not in self.graph.nodes and eid not in self.graph.edges:
                raise ValueError(f"contract {self.id}: unknown element {eid!r}")
            el.validate(f"contract {self.id} element {eid}")
        for role, eid in self.role_edges.items():
            if role not in ROLES:
                raise ValueError(f"unknown edge role {role!r}")
            if eid not in self.graph.edges:
                raise ValueError(f"role edge {eid!r} not in contract graph")
        if any(D(v) < 0 for v in self.integral_quantities.values()):
            raise ValueError("integral quantities must be non-negative")

    def key(self) -> tuple:
        """Structural identity: graph shape plus every interval and quantity."""
        edges = tuple(sorted((e.id, e.i, e.k, e.kind) for e in self.graph.edges.values()))
        return (self.id, self.boundary, tuple(sorted(self.graph.nodes)), edges,
                tuple(sorted(self.elements.items())), tuple(sorted(self.integral_quantities.items())),
                tuple(sorted(self.role_edges.items())), tuple(sorted(self.values.items())), self.version)

    def __eq__(self, other):
        return isinstance(other, ContractNetwork) and self.key() == other.key()

    __hash__ = None

    @property
    def is_single_node(self) -> bool:
        return len(self.graph.nodes) == 1 and not self.graph.edges

    @property
    def tiers(self) -> tuple:
        """Demand tiers of the reduced form."""
        return reduce(self).elements[self.boundary].demand

    @property
    def pressure_window(self):
        p = reduce(self).elements[self.boundary].pressure
        return p[0] if p else None


def _intervals(items, priced=False):
    out = []
    for it in items or ():
        if isinstance(it, (Tier, Interval)):
            out.append(it)
            continue
        if isinstance(it, str):
            out.append(Interval.parse(it))
            continue
        if isinstance(it, dict):
            iv = it["interval"]
            iv = Interval.parse(iv) if isinstance(iv, str) else Interval(*iv)
            price = it.get("price")
            if priced:
                if price is None:
                    raise MissingPriceProcedure(f"tier {iv} has no price")
                price = price if isinstance(price, PriceProcedure) else PriceProcedure(D(price))
                out.append(Tier(iv, price))
            else:
                out.append(iv)
            continue
        lo, hi = it[:2]
        iv = Interval(D(lo), D(hi))
        if priced:
            if len(it) < 3:
                raise MissingPriceProcedure(f"tier {iv} has no price")
            p = it[2]
            out.append(Tier(iv, p if isinstance(p, PriceProcedure) else PriceProcedure(D(p))))
        else:
            out.append(iv)
    return tuple(out)


def build_contract(spec: dict) -> ContractNetwork:
    """Contract from a plain dict.

    The simple form needs ``id``, ``node``, ``demand`` (interval or tiers),
    ``pressure``, optional ``values`` and ``price`` (flat unit price when
    ``demand`` is a single interval). The rich form gives ``graph`` (a
    Network), ``boundary`` and ``elements`` mapping element ids to dicts
    with ``demand``/``pressure``/``calorific`` lists.
    """
    cid = str(spec["id"])
    if "graph" in spec:
        graph, boundary = spec["graph"], spec["boundary"]
        elements = {k: ElementIntervals(_intervals(v.get("demand"), True),
                                        _intervals(v.get("pressure")),
                                        _intervals(v.get("calorific")))
                    for k, v in spec["elements"].items()}
    else:
        node = str(spec["node"])
        graph = Network([Node(node)], [])
        boundary = node
        demand = spec["demand"]
        if isinstance(demand, (tuple, list)) and len(demand) == 2 and not isinstance(demand[0], (tuple, list, dict, str)):
            if "price" not in spec:
                raise MissingPriceProcedure(f"contract {cid}: no price procedure")
            demand = [(demand[0], demand[1], spec["price"])]
        pressure = spec.get("pressure")
        pressure = [pressure] if pressure is not None and not isinstance(pressure[0], (tuple, list, str)) else pressure
        cal = spec.get("calorific")
        cal = [cal] if cal is not None and not isinstance(cal[0], (tuple, list, str)) else cal
        elements = {node: ElementIntervals(_intervals(demand, True), _intervals(pressure), _intervals(cal))}
    integral = {str(k): D(v) for k, v in (spec.get("integral_quantities") or {}).items()}
    return ContractNetwork(cid, graph, boundary, elements, integral, dict(spec.get("role_edges") or {}),
                           dict(spec.get("values") or {}))


# -- reduction / expansion ----------------------------------------------------------------
def _sum_tiers(tier_lists):
    """Pointwise sum of ordered tier lists: tier j bounds add up."""
    n = max(len(t) for t in tier_lists)
    out = []
    for j in range(n):
        lo = hi = Decimal(0)
        money = Decimal(0)
        prices = set()
        for tl in tier_lists:
            if not tl:
                continue
            t = tl[min(j, len(tl) - 1)]
            if j < len(tl):
                lo += t.interval.lo
                hi += t.interval.hi
                money += t.price.unit_price * t.capacity
            else:   # shorter list: keeps its top level, adds no capacity
                lo += t.interval.hi
                hi += t.interval.hi
            prices.add(t.price)
        if len(prices) == 1:
            price = prices.pop()
        else:
            cap = hi - lo
            price = PriceProcedure(money / cap if cap else max(p.unit_price for p in prices))
        open_lo = j > 0
        out.append(Tier(Interval(lo, hi, open_lo, False), price))
    return tuple(out)


def _intersect_all(windows):
    out = None
    for w in windows:
        out = w if out is None else out.intersect(w)
    return (out,) if out is not None else ()


def reduce(contract: ContractNetwork) -> ContractNetwork:
    """Collapse the contract to its boundary node.

    Demand tiers add up tier by tier; pressure and calorific windows
    intersect (EmptyIntersection when they exclude each other).
    """
    if contract.is_single_node and set(contract.elements) <= {contract.boundary}:
        return contract
    els = list(contract.elements.values())
    demand = _sum_tiers([e.demand for e in els if e.demand]) if any(e.demand for e in els) else ()
    pressure = _intersect_all([w for e in els for w in e.pressure])
    calorific = _intersect_all([w for e in els for w in e.calorific])
    graph = Network([Node(contract.boundary)], [])
    red = ElementIntervals(demand, pressure, calorific)
    return ContractNetwork(contract.id, graph, contract.boundary, {contract.boundary: red},
                           dict(contract.integral_quantities), {}, dict(contract.values),
                           contract.version, detail=contract)


def expand(reduced: ContractNetwork, detail: ContractNetwork | None = None) -> ContractNetwork:
    """Restore the detailed contract behind a reduced one."""
    full = detail or reduced.detail
    if full is None:
        return reduced
    if reduce(full).elements != reduced.elements:
        raise ValueError("detail does not reduce to the given contract")
    return replace(full, integral_quantities=dict(reduced.integral_quantities),
                   version=reduced.version)


# -- tier arithmetic ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LineItem:
    tier: int
    volume: Decimal
    unit_price: Decimal
    amount: Decimal


def tier_fill(tiers, volume, quality=None):
    """Split a volume over ordered tiers, lowest first; returns (items, overflow)."""
    v = D(volume)
    if v < 0:
        raise ValueError("volume must be non-negative")
    items, rest = [], v
    for j, t in enumerate(tiers, 1):
        if rest <= 0:
            break
        take = min(rest, t.capacity)
        if take > 0 or j == 1:
            items.append(LineItem(j, take, t.price.unit_price, t.price(take, quality)))
        rest -= take
    overflow = rest > 0
    if overflow:
        top = tiers[-1]
        items.append(LineItem(len(tiers), rest, top.price.unit_price, top.price.unit_price * rest))
    return items, overflow


@dataclass
class BookingReport:
    contract: str
    volume: Decimal
    tier: int
    quote: Decimal
    items: list
    hydraulic: dict | None = None


@dataclass(frozen=True)
class Nomination:
    contract: str
    period: str
    volume: Decimal
    pressure_window: tuple | None = None
    calorific: Decimal | None = None

    def __post_init__(self):
        dt.date.fromisoformat(str(self.period))
        object.__setattr__(self, "period", str(self.period))
        object.__setattr__(self, "volume", D(self.volume))
        if self.volume < 0:
            raise ValueError("nominated volume must be non-negative")
        if self.calorific is not None:
            object.__setattr__(self, "calorific", D(self.calorific))


def check_booking(contract: ContractNetwork, nomination: Nomination, probe=None) -> BookingReport:
    """Check a nomination against the contract tiers and, optionally, the network.

    `probe(node, volume)` returns (ok, failing) for the network with the
    nominated volume imposed at the contract boundary (see HydraulicProbe).
    """
    red = reduce(contract)
    el = red.elements[red.boundary]
    tiers = el.demand
    v = nomination.volume
    tier = next((j for j, t in enumerate(tiers, 1) if v in t.interval), None)
    if tier is None:
        lo, hi = tiers[0].interval.lo, tiers[-1].interval.hi
        raise OutOfInterval(f"volume {v} outside the contract range [{lo}, {hi}]",
                            min(max(v, lo), hi))
    if nomination.pressure_window is not None and el.pressure:
        want = Interval(D(nomination.pressure_window[0]), D(nomination.pressure_window[1]))
        try:
            want.intersect(el.pressure[0])
        except EmptyIntersection:
            raise OutOfInterval(f"pressure window {want} outside contract {el.pressure[0]}",
                                el.pressure[0]) from None
    if nomination.calorific is not None and el.calorific:
        if not any(nomination.calorific in w for w in el.calorific):
            w = el.calorific[0]
            raise OutOfInterval(f"calorific value {nomination.calorific} outside {w}",
                                w.clamp(nomination.calorific))
    items, _ = tier_fill(tiers, v, nomination.calorific)
    quote = sum((i.amount for i in items), Decimal(0))
    report = BookingReport(contract.id, v, tier, quote, items)
    if probe is not None:
        ok, failing = probe(contract.boundary, float(v))
        report.hydraulic = {"feasible": ok, "failing": failing}
        if not ok:
            raise HydraulicallyInfeasible(f"nomination of {v} at {contract.boundary} breaks the network",
                                          failing)
    return report


class HydraulicProbe:
    """Network check for bookings: impose a demand at a node and re-solve.

    The `slack` node (default: the root) absorbs the change so the state
    stays balanced; stations keep their schemes and get new set-points.
    """

    def __init__(self, net, root, root_pressure, slack=None, gas=None, tol=0.01):
        self.net, self.root, self.root_pressure = net, root, root_pressure
        self.slack = slack or root
        self.gas, self.tol = gas, tol

    def __call__(self, node, volume):
        from .netopt.evaluate import Evaluator, SearchSpace
        from .netopt.objective import make_objective

        old = self.net.nodes[node]
        sl = self.net.nodes[self.slack]
        delta = volume - old.intensity
        upd = {node: replace(old, intensity=volume, intensity_bounds=(volume, volume))}
        q = sl.intensity - delta if self.slack != node else volume
        if self.slack != node:
            upd[self.slack] = replace(sl, intensity=q, intensity_bounds=(q, q))
        net = self.net.with_nodes(**upd)
        space = SearchSpace(self.root, self.root_pressure)
        ev = Evaluator(net, space, make_objective("power_min", net), self.gas, self.tol)
        sol = ev.evaluate({})
        if sol.feasible:
            return True, []
        failing = list(sol.info.get("failing") or []) or [sol.info.get("reason")]
        return False, failing


# -- stations and invoicing ----------------------------------------------------------------------
@dataclass(frozen=True)
class StationNetwork:
    graph: Network
    kinds: dict                 # edge id -> one of STATION_KINDS
    meters: tuple
    boundary_nodes: tuple

    def __post_init__(self):
        for eid, k in self.kinds.items():
            if k not in STATION_KINDS:
                raise ValueError(f"station element {eid}: unknown kind {k!r}")
        g = nx.MultiGraph()
        for e in self.graph.edges.values():
            g.add_edge(e.i, e.k, key=e.id)
        for m in self.meters:
            if m not in self.graph.edges:
                raise ValueError(f"meter {m!r} is not a station edge")
            e = self.graph.edges[m]
            h = g.copy()
            h.remove_edge(e.i, e.k, key=m)
            ok = False
            for a, b in ((e.i, e.k), (e.k, e.i)):
                ra = nx.node_connected_component(h, a) & set(self.boundary_nodes)
                rb = nx.node_connected_component(h, b) & set(self.boundary_nodes)
                if ra and rb and (ra != rb or len(ra) > 1):
                    ok = True
            if not ok:
                raise ValueError(f"meter {m!r} is not on a path between boundary nodes")

    def route(self, meter, target) -> list:
        """Shortest node path from a meter's downstream end to `target`."""
        if target not in self.graph.nodes:
            raise UnroutableMeter(f"contract boundary {target!r} is not in the station")
        g = nx.Graph()
        for e in self.graph.edges.values():
            g.add_edge(e.i, e.k)
        e = self.graph.edges[meter]
        best = None
        for start in (e.k, e.i):
            try:
                paths = list(nx.all_shortest_paths(g, start, target))
            except nx.NetworkXNoPath:
                continue
            if best is None or len(paths[0]) < len(best[0]):
                best = paths
        if best is None:
            raise UnroutableMeter(f"meter {meter!r} has no route to {target!r}")
        if len(best) > 1:
            raise UnroutableMeter(f"meter {meter!r} reaches {target!r} along {len(best)} equally short paths")
        return best[0]


@dataclass
class Statement:
    contract: str
    period: str
    volume: Decimal
    items: list
    total: Decimal
    overflow: bool
    version: int

    def lines(self) -> list:
        out = [f"contract\t{self.contract}", f"period\t{self.period}", "tier\tvolume\tunit_price\tamount"]
        out += [f"{i.tier}\t{i.volume}\t{i.unit_price}\t{i.amount}" for i in self.items]
        out.append(f"total\t{self.total}")
        if self.overflow:
            out.append("flag\tTierOverflow")
        return out


def invoice(contract: ContractNetwork, metered: dict, station: StationNetwork | None = None,
            period: str | None = None, strict=False, quality=None):
    """Distribute metered volumes backwards over the tiers and bill them.

    Returns (statement, new contract version with updated integral
    quantities). Volume above the top tier is billed at the top tier's price
    and flagged; with strict=True it raises TierOverflow instead.
    """
    period = str(period or dt.date.today().isoformat())
    dt.date.fromisoformat(period)
    vols = []
    for meter, v in sorted(metered.items(), key=lambda kv: natural_key(kv[0])):
        v = D(v)
        if v < 0:
            raise ValueError(f"meter {meter}: negative volume")
        if station is not None:
            if meter not in station.meters:
                raise UnroutableMeter(f"{meter!r} is not a meter of the station")
            station.route(meter, contract.boundary)
        vols.append(v)
    total_v = sum(vols, Decimal(0))
    tiers = reduce(contract).elements[contract.boundary].demand
    items, overflow = tier_fill(tiers, total_v, quality)
    if overflow and strict:
        raise TierOverflow(f"metered {total_v} exceeds the top tier {tiers[-1].interval.hi}")
    total = sum((i.amount for i in items), Decimal(0))
    iq = dict(contract.integral_quantities)
    iq[period] = iq.get(period, Decimal(0)) + total_v
    new = replace(contract, integral_quantities=iq, version=contract.version + 1)
    return Statement(contract.id, period, total_v, items, total, overflow, new.version), new


def integral_over(contract: ContractNetwork, periods) -> Decimal:
    """Accumulated volume over the given period keys."""
    return sum((contract.integral_quantities.get(str(p), Decimal(0)) for p in periods), Decimal(0))
