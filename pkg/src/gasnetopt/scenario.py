"""Scenario text format: INI-like key/value sections plus tab-separated tables.

Grammar (see docs/scenario_format.md for the full column lists)::

    file     := { blank | comment | section }
    comment  := optional blanks, "#", anything
    section  := "[" name "]" NEWLINE body
    body     := { key " = " value }                 (key/value sections)
              | header NEWLINE { row NEWLINE }       (table sections, TAB separated)

Every key and column is checked against a schema; unknown ones raise
ParseError with the line (and column) number. An empty table field means
"not given". Floats are written with repr so parse(emit(s)) == s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ParseError, SchemaError
from .hydraulics import DEFAULT_ROUGHNESS, CompressorScheme, GasProperties, MachineGroup, PipeSpec
from .network import INF, Edge, Network, Node, build_network

# column/key types: str, float, int, list (comma separated strings)
KV_SCHEMAS = {
    "scenario": {"name": "str", "root": "str", "root_pressure": "float", "mode": "str",
                 "tol": "float", "method": "str", "seed": "int", "period": "str"},
    "gas": {"specific_density": "float", "compressibility": "float", "temperature": "float",
            "calorific_value": "float"},
    "objective": {"kind": "str", "energy_price": "float", "fuel_price": "float",
                  "electricity_price": "float"},
    "search": {"discrete": "list", "free_nodes": "list", "max_nodes": "int", "gap": "float",
               "restarts": "int"},
}

TABLE_SCHEMAS = {
    "nodes": [("id", "str"), ("intensity", "float"), ("q_min", "float"), ("q_max", "float"),
              ("p_min", "float"), ("p_max", "float"), ("pressure", "float"), ("roles", "list")],
    "junctions": [("id", "str"), ("intensity", "float"), ("q_min", "float"), ("q_max", "float"),
                  ("p_min", "float"), ("p_max", "float"), ("pressure", "float"), ("roles", "list")],
    "sections": [("id", "str"), ("from", "str"), ("to", "str"), ("lengths", "list"),
                 ("joints", "list"), ("k", "float"), ("diameters", "list"), ("efficiency", "float"),
                 ("roughness", "float"), ("q_min", "float"), ("q_max", "float")],
    "stations": [("id", "str"), ("from", "str"), ("to", "str"), ("choice", "int"),
                 ("control", "float"), ("c_min", "float"), ("c_max", "float"), ("q_min", "float"),
                 ("q_max", "float"), ("efficiency", "float"), ("inlet_temperature", "float"),
                 ("exponent", "float"), ("max_ratio", "float"), ("ratio_min", "float"),
                 ("ratio_max", "float")],
    "schemes": [("station", "str"), ("scheme", "int"), ("driver", "str"), ("unit_power", "float"),
                ("available", "int"), ("parallel", "int"), ("serial", "int"),
                ("efficiency", "float"), ("max_string_flow", "float")],
    "valves": [("id", "str"), ("from", "str"), ("to", "str"), ("kind", "str"), ("state", "str"),
               ("setpoint", "float"), ("c_min", "float"), ("c_max", "float"), ("q_min", "float"),
               ("q_max", "float")],
    "links": [("id", "str"), ("from", "str"), ("to", "str"), ("q_min", "float"), ("q_max", "float")],
    "prices": [("node", "str"), ("purchase", "float"), ("sale", "float")],
    "setpoints": [("node", "str"), ("pressure", "float"), ("weight", "float")],
    "choices": [("edge", "str"), ("allowed", "list")],
    "supply_quality": [("node", "str"), ("calorific", "float")],
    "opex": [("station", "str"), ("money", "float")],
    "fixed_costs": [("edge", "str"), ("money", "float")],
    "paths": [("origin", "str"), ("terminus", "str"), ("via", "list")],
    "flow_costs": [("edge", "str"), ("kind", "str"), ("coefficients", "list"), ("q_min", "float"),
                   ("q_max", "float")],
    "contracts": [("id", "str"), ("node", "str"), ("demand", "str"), ("pressure", "str"),
                  ("calorific", "str")],
    "nominations": [("contract", "str"), ("period", "str"), ("volume", "str"), ("p_min", "float"),
                    ("p_max", "float"), ("calorific", "str")],
    "meters": [("contract", "str"), ("period", "str"), ("meter", "str"), ("volume", "str")],
}
REQUIRED = {"nodes": ("id",), "junctions": ("id",), "sections": ("id", "from", "to", "lengths"),
            "stations": ("id", "from", "to"), "schemes": ("station", "scheme", "driver", "unit_power",
                                                          "available", "parallel", "serial"),
            "valves": ("id", "from", "to", "kind"), "links": ("id", "from", "to"),
            "prices": ("node",), "setpoints": ("node", "pressure"), "choices": ("edge", "allowed"),
            "supply_quality": ("node", "calorific"), "opex": ("station", "money"),
            "fixed_costs": ("edge", "money"), "paths": ("origin", "terminus"),
            "flow_costs": ("edge", "kind", "coefficients"), "contracts": ("id", "node", "demand"),
            "nominations": ("contract", "period", "volume"),
            "meters": ("contract", "period", "meter", "volume")}
SECTION_ORDER = list(KV_SCHEMAS) + list(TABLE_SCHEMAS)


@dataclass
class ScenarioFile:
    """Parsed scenario: key/value sections and typed table rows, in file order."""
    sections: dict = field(default_factory=dict)   # name -> {key: value}
    tables: dict = field(default_factory=dict)     # name -> [row dict with every schema column]

    def get(self, section, key, default=None):
        v = self.sections.get(section, {}).get(key)
        return default if v is None else v

    def rows(self, table) -> list:
        return self.tables.get(table, [])

    @property
    def name(self) -> str:
        return self.get("scenario", "name", "scenario")


# -- value conversion ---------------------------------------------------------------------
def _convert(typ, text, line, col):
    if text == "":
        return None
    try:
        if typ == "str":
            return text
        if typ == "float":
            v = float(text)
            if math.isnan(v):
                raise ValueError("nan")
            return v
        if typ == "int":
            return int(text)
        if typ == "list":
            return tuple(p.strip() for p in text.split(","))
    except ValueError:
        raise ParseError(f"cannot read {text!r} as {typ}", line, col) from None
    raise AssertionError(typ)


def format_value(v) -> str:
    """Lossless text form used by emit_scenario."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    return str(v)


def _check_text(v, where):
    if isinstance(v, str) and any(c in v for c in "\t\n\r"):
        raise SchemaError(f"{where}: value {v!r} contains a tab or newline")


# -- parse / emit ------------------------------------------------------------------------------
def parse_scenario(text: str) -> ScenarioFile:
    scn = ScenarioFile()
    current, header = None, None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r")
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ParseError("unterminated section header", lineno, len(line))
            name = stripped[1:-1].strip()
            if name not in KV_SCHEMAS and name not in TABLE_SCHEMAS:
                raise ParseError(f"unknown section [{name}]", lineno, 2)
            if name in scn.sections or name in scn.tables:
                raise ParseError(f"section [{name}] appears twice", lineno, 2)
            current, header = name, None
            if name in KV_SCHEMAS:
                scn.sections[name] = {}
            else:
                scn.tables[name] = []
            continue
        if current is None:
            raise ParseError("content before the first section", lineno, 1)
        if current in KV_SCHEMAS:
            if "=" not in line:
                raise ParseError("expected 'key = value'", lineno, 1)
            key, _, value = line.partition("=")
            key = key.strip()
            schema = KV_SCHEMAS[current]
            if key not in schema:
                raise ParseError(f"unknown key {key!r} in [{current}]", lineno, line.index(key[0]) + 1 if key else 1)
            if key in scn.sections[current]:
                raise ParseError(f"duplicate key {key!r}", lineno, 1)
            col = line.index("=") + 2
            scn.sections[current][key] = _convert(schema[key], value.strip(), lineno, col)
            continue
        cells = line.split("\t")
        cols = [c for c, _ in TABLE_SCHEMAS[current]]
        if header is None:
            pos = 1
            for c in cells:
                name = c.strip()
                if name not in cols:
                    raise ParseError(f"unknown column {name!r} in [{current}]", lineno, pos)
                pos += len(c) + 1
            header = [c.strip() for c in cells]
            if len(set(header)) != len(header):
                raise ParseError("duplicate column", lineno, 1)
            missing = [c for c in REQUIRED.get(current, ()) if c not in header]
            if missing:
                raise ParseError(f"[{current}] lacks required columns {missing}", lineno, 1)
            continue
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(cells)}", lineno,
                             len(line) + 1 if len(cells) < len(header) else
                             sum(len(c) + 1 for c in cells[:len(header)]) + 1)
        types = dict(TABLE_SCHEMAS[current])
        row = {c: None for c in cols}
        pos = 1
        for name, cell in zip(header, cells):
            row[name] = _convert(types[name], cell.strip(), lineno, pos)
            pos += len(cell) + 1
        for c in REQUIRED.get(current, ()):
            if row[c] is None:
                raise ParseError(f"required field {c!r} is empty", lineno, 1)
        scn.tables[current].append(row)
    return scn


def emit_scenario(scn: ScenarioFile) -> str:
    out = []
    for name in SECTION_ORDER:
        if name in scn.sections:
            out.append(f"[{name}]")
            for key in KV_SCHEMAS[name]:
                v = scn.sections[name].get(key)
                if v is not None:
                    _check_text(v, f"[{name}] {key}")
                    out.append(f"{key} = {format_value(v)}")
            out.append("")
        elif name in scn.tables:
            rows = scn.tables[name]
            cols = [c for c, _ in TABLE_SCHEMAS[name]]
            used = [c for c in cols if c in REQUIRED.get(name, ()) or any(r.get(c) is not None for r in rows)]
            out.append(f"[{name}]")
            out.append("\t".join(used))
            for r in rows:
                for c in used:
                    _check_text(r.get(c), f"[{name}] {c}")
                out.append("\t".join(format_value(r.get(c)) for c in used))
            out.append("")
    return "\n".join(out)


def read_scenario(path) -> ScenarioFile:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# -- building model objects --------------------------------------------------------------------
def scenario_gas(scn: ScenarioFile) -> GasProperties:
    g = scn.sections.get("gas", {})
    kw = {}
    for key, attr in (("specific_density", "specific_density_on_air"), ("compressibility", "compressibility"),
                      ("temperature", "temperature"), ("calorific_value", "calorific_value")):
        if g.get(key) is not None:
            kw[attr] = g[key]
    return GasProperties(**kw)


def _node(row, extra_roles=()):
    q = row["intensity"] or 0.0
    lo = row["q_min"] if row["q_min"] is not None else q
    hi = row["q_max"] if row["q_max"] is not None else q
    plo = row["p_min"] if row["p_min"] is not None else 0.0
    phi = row["p_max"] if row["p_max"] is not None else INF
    roles = frozenset(row["roles"] or ()) | frozenset(extra_roles)
    return Node(row["id"], (lo, hi), (plo, phi), q, row["pressure"], roles)


def _flow_bounds(row, default=(-INF, INF)):
    lo = row["q_min"] if row.get("q_min") is not None else default[0]
    hi = row["q_max"] if row.get("q_max") is not None else default[1]
    return (lo, hi)


def _schemes(scn, st):
    rows = [r for r in scn.rows("schemes") if r["station"] == st["id"]]
    if not rows:
        raise SchemaError(f"station {st['id']} has no scheme rows")
    by = {}
    for r in rows:
        by.setdefault(r["scheme"], []).append(r)
    if sorted(by) != list(range(len(by))):
        raise SchemaError(f"station {st['id']}: scheme indices must be 0..n-1")
    out = []
    for s in range(len(by)):
        groups = tuple(MachineGroup(r["driver"], r["unit_power"], r["available"], r["parallel"], r["serial"],
                                    r["efficiency"] if r["efficiency"] is not None else 1.0,
                                    r["max_string_flow"]) for r in by[s])
        kw = {}
        for col, attr in (("efficiency", "station_efficiency"), ("inlet_temperature", "gas_inlet_temperature"),
                          ("exponent", "polytropic_exponent"), ("max_ratio", "max_ratio")):
            if st[col] is not None:
                kw[attr] = st[col]
        out.append(CompressorScheme(groups, **kw))
    return tuple(out)


def scenario_network(scn: ScenarioFile) -> Network:
    """Network described by the scenario (root role added to the root node)."""
    if not scn.rows("nodes") and not scn.rows("junctions"):
        raise SchemaError("the network has no nodes")
    root = scn.get("scenario", "root")
    nodes = {}
    for table in ("nodes", "junctions"):
        for r in scn.rows(table):
            if r["id"] in nodes:
                raise SchemaError(f"node {r['id']} declared twice")
            nodes[r["id"]] = _node(r, ("root",) if r["id"] == root else ())
    if root is not None and root not in nodes:
        raise SchemaError(f"root {root!r} is not a declared node")
    edges = []
    for r in scn.rows("sections"):
        lengths = [float(x) for x in r["lengths"]]
        joints = list(r["joints"] or ())
        if len(joints) != len(lengths) - 1:
            raise SchemaError(f"section {r['id']}: {len(lengths)} lengths need {len(lengths) - 1} joints")
        path = [r["from"], *joints, r["to"]]
        diam = tuple(float(x) for x in r["diameters"]) if r["diameters"] else (1.0,)
        for j, (a, b) in enumerate(zip(path, path[1:])):
            spec = PipeSpec(lengths[j], diam, r["efficiency"] if r["efficiency"] is not None else 0.92,
                            r["roughness"] if r["roughness"] is not None else DEFAULT_ROUGHNESS, r["k"])
            eid = f"{r['id']}.{j + 1}" if len(lengths) > 1 else r["id"]
            edges.append(Edge(eid, a, b, "pipe", _flow_bounds(r), pipe=spec, section=r["id"]))
    for r in scn.rows("stations"):
        side = {}
        if r["ratio_min"] is not None or r["ratio_max"] is not None:
            side["ratio"] = (r["ratio_min"] if r["ratio_min"] is not None else 1.0,
                             r["ratio_max"] if r["ratio_max"] is not None else INF)
        edges.append(Edge(r["id"], r["from"], r["to"], "compressor_station", _flow_bounds(r, (0.0, INF)),
                          choices=_schemes(scn, r), choice=r["choice"] or 0,
                          control_bounds=(r["c_min"] if r["c_min"] is not None else 0.0,
                                          r["c_max"] if r["c_max"] is not None else 1.0),
                          control=r["control"] if r["control"] is not None else 1.0, side=side))
    for r in scn.rows("valves"):
        if r["kind"] == "shutoff_valve":
            state = r["state"] or "open"
            if state not in ("open", "closed"):
                raise SchemaError(f"valve {r['id']}: state must be open or closed")
            edges.append(Edge(r["id"], r["from"], r["to"], "shutoff_valve", _flow_bounds(r),
                              choices=("open", "closed"), choice=0 if state == "open" else 1))
        elif r["kind"] == "control_valve":
            lo = r["c_min"] if r["c_min"] is not None else 0.0
            hi = r["c_max"] if r["c_max"] is not None else INF
            edges.append(Edge(r["id"], r["from"], r["to"], "control_valve", _flow_bounds(r, (0.0, INF)),
                              control_bounds=(lo, hi), control=r["setpoint"]))
        else:
            raise SchemaError(f"valve {r['id']}: unknown kind {r['kind']!r}")
    for r in scn.rows("links"):
        edges.append(Edge(r["id"], r["from"], r["to"], "contract_link", _flow_bounds(r)))
    for e in edges:
        for n in (e.i, e.k):
            if n not in nodes:
                raise SchemaError(f"edge {e.id} references undeclared node {n!r}")
    return build_network(list(nodes.values()), edges)


def scenario_space(scn: ScenarioFile, net: Network):
    """SearchSpace from [scenario] root and the [search]/[choices] sections."""
    from .netopt.evaluate import SearchSpace

    root = scn.get("scenario", "root")
    p0 = scn.get("scenario", "root_pressure")
    if root is None or p0 is None:
        raise SchemaError("[scenario] needs root and root_pressure")
    disc = {}
    sel = scn.get("search", "discrete", ("none",))
    if sel == ("all",):
        disc = {e.id: tuple(range(e.n_choices)) for e in net.edges.values()
                if e.n_choices > 1 and e.kind in ("compressor_station", "shutoff_valve")}
    elif sel != ("none",):
        for eid in sel:
            if eid not in net.edges:
                raise SchemaError(f"[search] discrete names unknown edge {eid!r}")
            disc[eid] = tuple(range(net.edges[eid].n_choices))
    for r in scn.rows("choices"):
        if r["edge"] not in net.edges:
            raise SchemaError(f"[choices] unknown edge {r['edge']!r}")
        disc[r["edge"]] = tuple(int(x) for x in r["allowed"])
    free = {}
    for n in scn.get("search", "free_nodes", ()) or ():
        if n not in net.nodes:
            raise SchemaError(f"[search] free node {n!r} unknown")
        free[n] = net.nodes[n].intensity_bounds
    return SearchSpace(root, p0, disc, free_intensities=free)


def scenario_objective(scn: ScenarioFile, net: Network, gas=None):
    from .netopt.objective import make_objective

    kind = scn.get("objective", "kind", "power_min")
    params = {"energy_price": scn.get("objective", "energy_price", 0.0)}
    prices = scn.rows("prices")
    params["purchase_prices"] = {r["node"]: r["purchase"] for r in prices if r["purchase"] is not None}
    params["sale_prices"] = {r["node"]: r["sale"] for r in prices if r["sale"] is not None}
    params["setpoints"] = {r["node"]: r["pressure"] for r in scn.rows("setpoints")}
    w = {r["node"]: r["weight"] for r in scn.rows("setpoints") if r["weight"] is not None}
    params["weights"] = w or None
    params["fixed_costs"] = {r["edge"]: r["money"] for r in scn.rows("fixed_costs")} or None
    return make_objective(kind, net, gas, **params)


def _cost_row(r):
    from .mincost.costs import EdgeCost

    kind = r["kind"]
    co = r["coefficients"]
    dom = _flow_bounds(r)
    if kind == "piecewise_convex":
        pts = []
        for p in co:
            x, _, y = p.partition(":")
            pts.append((float(x), float(y)))
        return EdgeCost(kind, tuple(pts), dom)
    return EdgeCost(kind, tuple(float(c) for c in co), dom)


def scenario_flow_problem(scn: ScenarioFile, net: Network, gas=None):
    """Min-cost flow version of the network.

    Edges listed in [flow_costs] use that cost. Other pipes get the cubic
    cost k l |q|^3 / 3, whose derivative k l q|q| is the squared-pressure
    drop, so the potentials play the role of P^2. Other elements are free.
    """
    from .hydraulics import edge_pipe_coefficient
    from .mincost.costs import EdgeCost
    from .mincost.solver import FlowProblem

    gas = gas or scenario_gas(scn)
    given = {r["edge"]: _cost_row(r) for r in scn.rows("flow_costs")}
    unknown = [e for e in given if e not in net.edges]
    if unknown:
        raise SchemaError(f"[flow_costs] unknown edges {unknown}")
    costs = {}
    for eid, e in net.edges.items():
        if eid in given:
            costs[eid] = given[eid]
        elif e.kind == "pipe":
            costs[eid] = EdgeCost.cubic(edge_pipe_coefficient(e, gas) * e.pipe.length / 3.0)
        else:
            costs[eid] = EdgeCost.linear(0.0)
    return FlowProblem(net, costs)


def scenario_contracts(scn: ScenarioFile) -> dict:
    from .contracts import build_contract

    out = {}
    for r in scn.rows("contracts"):
        tiers = []
        for part in r["demand"].split(";"):
            iv, _, price = part.partition("@")
            if not price:
                raise SchemaError(f"contract {r['id']}: tier {iv!r} has no '@price'")
            tiers.append({"interval": iv.strip(), "price": price.strip()})
        spec = {"id": r["id"], "node": r["node"], "demand": tiers}
        if r["pressure"]:
            spec["pressure"] = [r["pressure"]]
        if r["calorific"]:
            spec["calorific"] = [r["calorific"]]
        try:
            out[r["id"]] = build_contract(spec)
        except ValueError as exc:
            raise SchemaError(f"contract {r['id']}: {exc}") from exc
    return out

