"""Run scenarios in each mode and write their results as TSV files.

Every runner returns a ResultBundle: a status, a short summary and a few
tables. Numbers are written with 6 significant digits and column names
carry their units. Files are written atomically (temporary file plus
rename), so a crashed run never leaves a half-written result behind.
"""
from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field
from decimal import Decimal

from .errors import GasNetError, HydraulicallyInfeasible, Infeasible, OutOfInterval, StateRejected
from .network import Network, NetworkState, conservation_residual, natural_key
from .scenario import (ScenarioFile, scenario_contracts, scenario_flow_problem, scenario_gas,
                       scenario_network, scenario_objective, scenario_space)

GATE_TOL = 1e-9
MODES = ("solve", "optimize", "flow", "track", "contract-check", "contract-invoice")


@dataclass
class ResultTable:
    name: str
    columns: list
    rows: list = field(default_factory=list)


@dataclass
class ResultBundle:
    scenario: str
    mode: str
    status: str
    summary: dict = field(default_factory=dict)
    tables: list = field(default_factory=list)
    message: str = ""

    def table(self, name) -> ResultTable:
        return next(t for t in self.tables if t.name == name)

    def files(self) -> dict:
        """File name -> text, in a fixed order."""
        stem = f"{self.scenario}.{self.mode}"
        head = [("scenario", self.scenario), ("mode", self.mode), ("status", self.status)]
        if self.message:
            head.append(("message", self.message))
        summ = ["key\tvalue"] + [f"{k}\t{format_cell(v)}" for k, v in head + list(self.summary.items())]
        out = {f"{stem}.summary.tsv": "\n".join(summ) + "\n"}
        for t in self.tables:
            lines = ["\t".join(t.columns)] + ["\t".join(format_cell(v) for v in r) for r in t.rows]
            out[f"{stem}.{t.name}.tsv"] = "\n".join(lines) + "\n"
        return out


def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        s = f"{v:.6g}"
        return "0" if s == "-0" else s
    if isinstance(v, Decimal):
        return str(v)
    if isinstance(v, (list, tuple)):
        return ",".join(format_cell(x) for x in v)
    return str(v)


def atomic_write(path, text: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".tsv")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_results(bundle: ResultBundle, out_dir) -> list:
    """Write the bundle's files into out_dir; returns the paths written."""
    paths = []
    for name, text in bundle.files().items():
        p = os.path.join(out_dir, name)
        atomic_write(p, text)
        paths.append(p)
    return paths


# -- validation gate --------------------------------------------------------------------------
def validate_state(net: Network, state: NetworkState, controls=None, choices=None, tol=GATE_TOL):
    """Check conservation and every box before a state may be written.

    Raises StateRejected listing what is off by more than `tol`.
    """
    from .netopt.propagate import feasibility_report

    bad = [("conservation", n, r) for n, r in conservation_residual(net, state).items() if abs(r) >= tol]
    bad += [r for r in feasibility_report(net, state, controls, choices) if r[2] < -tol]
    if bad:
        raise StateRejected(f"{len(bad)} checks failed, first {bad[0]}", bad)


def _sorted(ids):
    return sorted(ids, key=natural_key)


def state_tables(net: Network, state: NetworkState, controls=None, choices=None, gas=None) -> list:
    from .hydraulics import edge_power

    controls, choices = controls or {}, choices or {}
    nodes = ResultTable("nodes", ["node", "intensity_Mm3d", "pressure_bar", "p_min_bar", "p_max_bar"])
    for n in _sorted(net.nodes):
        lo, hi = net.nodes[n].pressure_bounds
        nodes.rows.append([n, state.intensities[n], state.pressures.get(n), lo, hi])
    edges = ResultTable("edges", ["edge", "kind", "from", "to", "flow_Mm3d", "p_from_bar", "p_to_bar",
                                  "choice", "control", "power_MW"])
    for eid in _sorted(net.edges):
        e = net.edges[eid]
        d = choices.get(eid, e.choice) if e.n_choices > 1 else None
        power = edge_power(e, state.flows[eid], gas, d) if e.kind == "compressor_station" else None
        edges.rows.append([eid, e.kind, e.i, e.k, state.flows[eid], state.pressures.get(e.i),
                           state.pressures.get(e.k), d, controls.get(eid), power])
    return [nodes, edges]


# -- runners ---------------------------------------------------------------------------------
def _context(scn: ScenarioFile):
    net = scenario_network(scn)
    return net, scenario_gas(scn)


def run_solve(scn: ScenarioFile, tol=None) -> ResultBundle:
    """Hydraulic state for the configured schemes (no optimization)."""
    from .netopt.evaluate import Evaluator, SearchSpace

    net, gas = _context(scn)
    tol = tol if tol is not None else scn.get("scenario", "tol", 0.01)
    full = scenario_space(scn, net)
    space = SearchSpace(full.root, full.root_pressure)
    ev = Evaluator(net, space, scenario_objective(scn, net, gas), gas, tol)
    sol = ev.evaluate({})
    if not sol.feasible:
        failing = sol.info.get("failing") or []
        return ResultBundle(scn.name, "solve", "infeasible", {"failing": [str(f) for f in failing]},
                            message=str(sol.info.get("reason", "")))
    validate_state(net, sol.state, sol.controls, sol.choices)
    summary = {"objective": sol.objective_value,
               "max_closure_bar": max([abs(v) for v in sol.closure_errors.values()] or [0.0])}
    return ResultBundle(scn.name, "solve", "feasible", summary,
                        state_tables(net, sol.state, sol.controls, sol.choices, gas))


def run_optimize(scn: ScenarioFile, method=None, seed=None, tol=None) -> ResultBundle:
    from .netopt.bnb import Budget
    from .netopt.optimize import optimize, power_report

    net, gas = _context(scn)
    tol = tol if tol is not None else scn.get("scenario", "tol", 0.01)
    method = method or scn.get("scenario", "method", "bnb")
    seed = seed if seed is not None else scn.get("scenario", "seed", 0)
    space = scenario_space(scn, net)
    obj = scenario_objective(scn, net, gas)
    budget = Budget(max_nodes=scn.get("search", "max_nodes", 200_000), gap=scn.get("search", "gap", 0.0))
    sol = optimize(net, space, obj, method=method, gas=gas, tol=tol, budget=budget, seed=seed,
                   restarts=scn.get("search", "restarts", 5))
    validate_state(net, sol.state, sol.controls, sol.choices)
    rep = power_report(net, sol.info["initial_choices"], sol.choices)
    summary = {"method": method, "objective": sol.objective_value,
               "initial_objective": sol.info.get("initial_objective"),
               "initial_power_MW": rep["initial_power"], "optimal_power_MW": rep["optimal_power"],
               "savings_pct": rep["savings_pct"], "delta_machines": rep["delta_machines"]}
    stations = ResultTable("stations", ["station", "initial", "optimal", "changed", "delta_machines",
                                        "initial_power_MW", "optimal_power_MW"])
    for r in rep["stations"]:
        stations.rows.append([r["station"], r["initial"], r["optimal"], r["changed"], r["delta_machines"],
                              r["initial_power"], r["optimal_power"]])
    return ResultBundle(scn.name, "optimize", sol.status, summary,
                        state_tables(net, sol.state, sol.controls, sol.choices, gas) + [stations])


def run_flow(scn: ScenarioFile, tol=None) -> ResultBundle:
    """Min-cost flow mode; potentials are reported centred as the solver leaves them."""
    from .mincost.solver import solve_mincost

    net, gas = _context(scn)
    prob = scenario_flow_problem(scn, net, gas)
    sol = solve_mincost(prob)
    state = NetworkState({}, dict(prob.intensities), dict(sol.flows))
    validate_state(net, state)
    flows = ResultTable("flows", ["edge", "from", "to", "flow_Mm3d", "marginal_cost"])
    for eid in _sorted(net.edges):
        e = net.edges[eid]
        q = sol.flows[eid]
        c = prob.costs[eid]
        flows.rows.append([eid, e.i, e.k, q, None if c.is_kink(q) else c.derivative(q)])
    pots = ResultTable("potentials", ["node", "potential"])
    pots.rows = [[n, sol.potentials[n]] for n in _sorted(net.nodes)]
    summary = {"objective": sol.objective, "gap": sol.info.get("gap"),
               "violations": sol.info.get("violations"), "method": sol.info.get("method")}
    return ResultBundle(scn.name, "flow", sol.status, summary, [flows, pots])


def scenario_state(scn: ScenarioFile, tol=None):
    """(net, state, gas) used by tracking: hydraulic solve or min-cost flow per mode."""
    from .mincost.solver import solve_mincost
    from .netopt.evaluate import Evaluator, SearchSpace

    net, gas = _context(scn)
    if scn.get("scenario", "mode", "hydraulic") == "flow":
        prob = scenario_flow_problem(scn, net, gas)
        sol = solve_mincost(prob)
        return net, NetworkState({}, dict(prob.intensities), dict(sol.flows)), gas
    tol = tol if tol is not None else scn.get("scenario", "tol", 0.01)
    full = scenario_space(scn, net)
    ev = Evaluator(net, SearchSpace(full.root, full.root_pressure), scenario_objective(scn, net, gas), gas, tol)
    sol = ev.evaluate({})
    if not sol.feasible:
        raise Infeasible(f"no feasible hydraulic state: {sol.info.get('reason')}", sol.info.get("failing") or [])
    return net, sol.state, gas


_PATH_UNITS = {"pressure": "pressure_bar", "intensity": "intensity_Mm3d", "flow": "flow_Mm3d",
               "quality": "calorific_MJm3", "cost_flow": "cost_flow_per_d", "unit_cost": "unit_cost_per_Mm3"}


def run_track(scn: ScenarioFile, tol=None) -> ResultBundle:
    from .tracking import (cost_tracking, path_profile, quality_tracking, select_path, station_opex,
                           supply_tracking)

    net, state, gas = scenario_state(scn, tol)
    fr = supply_tracking(net, state)
    sq = {r["node"]: r["calorific"] for r in scn.rows("supply_quality")}
    quality = quality_tracking(net, state, sq, fr) if sq else None
    prices = {r["node"]: r["purchase"] for r in scn.rows("prices") if r["purchase"] is not None}
    costs = None
    if prices:
        opex = {r["station"]: r["money"] for r in scn.rows("opex")}
        if not opex:
            opex = station_opex(net, state, scn.get("objective", "fuel_price", 0.0),
                                scn.get("objective", "electricity_price", 0.0))
        fixed = {r["edge"]: r["money"] for r in scn.rows("fixed_costs")}
        costs = cost_tracking(net, state, prices, opex, fixed, fractions=fr)
    cols = ["node"] + [f"share_{s}" for s in fr.supplies]
    if quality is not None:
        cols.append("calorific_MJm3")
    if costs is not None:
        cols += ["cost_flow_per_d", "unit_cost_per_Mm3"]
    nodes = ResultTable("tracking", cols)
    for n in _sorted(fr.nodes):
        row = [n] + [fr.nodes[n][s] for s in fr.supplies]
        if quality is not None:
            row.append(quality[n])
        if costs is not None:
            row += [costs.total[n], costs.normalized[n]]
        nodes.rows.append(row)
    tables = [nodes]
    for j, r in enumerate(scn.rows("paths"), 1):
        path = select_path(net, r["origin"], r["terminus"], r["via"] or ())
        nrows, erows = path_profile(net, path, state, fr, quality, costs)
        for name, rows in ((f"path{j}_nodes", nrows), (f"path{j}_edges", erows)):
            if rows:
                keys = list(rows[0])
                cols = [_PATH_UNITS.get(k, k) for k in keys]
                tables.append(ResultTable(name, cols, [[x[k] for k in keys] for x in rows]))
    summary = {"supplies": fr.supplies}
    if costs is not None:
        summary.update({"injected_per_d": costs.injected, "delivered_per_d": costs.delivered_total,
                        "unallocated_per_d": costs.unallocated})
    return ResultBundle(scn.name, "track", "ok", summary, tables)


def run_contract_check(scn: ScenarioFile, tol=None, hydraulic=True) -> ResultBundle:
    from .contracts import HydraulicProbe, Nomination, check_booking

    contracts = scenario_contracts(scn)
    probe = None
    if hydraulic and scn.get("scenario", "root") is not None and scn.rows("nodes"):
        net, gas = _context(scn)
        probe = HydraulicProbe(net, scn.get("scenario", "root"), scn.get("scenario", "root_pressure"), gas=gas,
                               tol=tol if tol is not None else scn.get("scenario", "tol", 0.01))
    table = ResultTable("bookings", ["contract", "period", "volume", "status", "tier", "quote", "detail"])
    rejected = 0
    for r in scn.rows("nominations"):
        c = contracts.get(r["contract"])
        if c is None:
            table.rows.append([r["contract"], r["period"], r["volume"], "unknown_contract", None, None, None])
            rejected += 1
            continue
        window = (r["p_min"], r["p_max"]) if r["p_min"] is not None and r["p_max"] is not None else None
        nom = Nomination(r["contract"], r["period"], r["volume"], window, r["calorific"])
        try:
            rep = check_booking(c, nom, probe)
            table.rows.append([c.id, nom.period, nom.volume, "accepted", rep.tier, rep.quote, None])
        except OutOfInterval as exc:
            rejected += 1
            table.rows.append([c.id, nom.period, nom.volume, "out_of_interval", None, None, f"nearest {exc.nearest}"])
        except HydraulicallyInfeasible as exc:
            rejected += 1
            table.rows.append([c.id, nom.period, nom.volume, "hydraulically_infeasible", None, None,
                               ",".join(map(str, exc.failing))])
    status = "rejected" if rejected else "ok"
    return ResultBundle(scn.name, "contract-check", status,
                        {"nominations": len(table.rows), "rejected": rejected}, [table])


def run_contract_invoice(scn: ScenarioFile, strict=False) -> ResultBundle:
    from .contracts import invoice

    contracts = scenario_contracts(scn)
    groups = {}
    for r in scn.rows("meters"):
        groups.setdefault((r["contract"], r["period"]), {})[r["meter"]] = r["volume"]
    table = ResultTable("invoices", ["contract", "period", "tier", "volume", "unit_price", "amount", "flag"])
    totals = ResultTable("totals", ["contract", "period", "volume", "total", "overflow", "version"])
    for (cid, period) in sorted(groups, key=lambda k: (natural_key(k[0]), k[1])):
        c = contracts.get(cid)
        if c is None:
            raise GasNetError(f"meter readings for unknown contract {cid!r}")
        st, new = invoice(c, groups[(cid, period)], period=period, strict=strict)
        contracts[cid] = new
        for i in st.items:
            table.rows.append([cid, period, i.tier, i.volume, i.unit_price, i.amount,
                               "TierOverflow" if st.overflow and i.tier == st.items[-1].tier else None])
        totals.rows.append([cid, period, st.volume, st.total, st.overflow, st.version])
    grand = sum((r[3] for r in totals.rows), Decimal(0))
    return ResultBundle(scn.name, "contract-invoice", "ok", {"statements": len(totals.rows), "total": grand},
                        [table, totals])


def default_mode(scn: ScenarioFile) -> str:
    if scn.get("scenario", "mode", "hydraulic") == "flow":
        return "flow"
    sel = scn.get("search", "discrete", ("none",))
    return "solve" if sel == ("none",) and not scn.rows("choices") else "optimize"


RUNNERS = {"solve": run_solve, "optimize": run_optimize, "flow": run_flow, "track": run_track,
           "contract-check": run_contract_check, "contract-invoice": run_contract_invoice}

EXIT_OK, EXIT_INFEASIBLE, EXIT_PARSE, EXIT_INTERNAL = 0, 2, 3, 4


def exit_code_for(exc: BaseException) -> int:
    from .errors import (ChokedFlow, ClosedValveFlow, EmptyIntersection, PressureCollapse, SchemaError,
                         ParseError, TierOverflow, UnbalancedFlow, Unbounded)

    if isinstance(exc, (ParseError, SchemaError)):
        return EXIT_PARSE
    if isinstance(exc, (Infeasible, HydraulicallyInfeasible, OutOfInterval, PressureCollapse, ChokedFlow,
                        ClosedValveFlow, EmptyIntersection, TierOverflow, Unbounded, UnbalancedFlow)):
        return EXIT_INFEASIBLE
    return EXIT_INTERNAL


def status_exit_code(bundle: ResultBundle) -> int:
    return EXIT_INFEASIBLE if bundle.status in ("infeasible", "rejected") else EXIT_OK


def run_batch(scenarios, tol=None, method=None, seed=None) -> list:
    """Run scenarios one after another in their own mode.

    Each scenario's error is caught and reported as its status, so one bad
    period does not stop the batch. Returns the bundles plus a final
    "batch" bundle holding the summary table.
    """
    bundles = []
    summary = ResultTable("runs", ["index", "scenario", "mode", "status", "exit", "objective", "message"])
    for j, scn in enumerate(scenarios, 1):
        mode = default_mode(scn)
        try:
            if mode == "optimize":
                b = run_optimize(scn, method, seed, tol)
            else:
                b = RUNNERS[mode](scn, tol=tol)
            code = status_exit_code(b)
        except GasNetError as exc:
            code = exit_code_for(exc)
            b = ResultBundle(scn.name, mode, "error", message=f"{type(exc).__name__}: {exc}")
        bundles.append(b)
        summary.rows.append([j, scn.name, mode, b.status, code, b.summary.get("objective"), b.message or None])
    worst = max([r[4] for r in summary.rows] or [0])
    bundles.append(ResultBundle("batch", "batch", "ok" if worst == 0 else "partial",
                                {"scenarios": len(summary.rows), "worst_exit": worst}, [summary]))
    return bundles
