"""Tree/chord propagation of flows and pressures and the chord Newton solver."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ClosedValveFlow, InvalidScheme, NoConvergence, PressureCollapse, ChokedFlow
from ..hydraulics import GasProperties, edge_inverse_transfer, edge_transfer
from ..network import Network, NetworkState, TreeDecomposition, spanning_tree

HYDRAULIC_ERRORS = (PressureCollapse, ClosedValveFlow, InvalidScheme, ChokedFlow)
FEAS_TOL = 1e-9


@dataclass
class Solution:
    state: NetworkState
    choices: dict = field(default_factory=dict)
    controls: dict = field(default_factory=dict)
    objective_value: float = math.nan
    feasibility_report: list = field(default_factory=list)
    closure_errors: dict = field(default_factory=dict)
    status: str = "unknown"
    info: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status in ("feasible", "optimal")


def closed_edges(net: Network, choices=None) -> list:
    choices = choices or {}
    out = []
    for e in net.edges.values():
        if e.kind == "shutoff_valve" and e.choices:
            if e.choices[choices.get(e.id, e.choice)] == "closed":
                out.append(e.id)
    return out


def tree_for(net: Network, root, choices=None) -> TreeDecomposition:
    return spanning_tree(net, root, exclude=closed_edges(net, choices))


def tree_flows(net: Network, tree: TreeDecomposition, chord_flows, intensities) -> dict:
    """Tree-edge flows from conservation, eliminating leaves towards the root."""
    flows = {e: 0.0 for e in net.edges}
    for c in tree.chords:
        flows[c] = float(chord_flows.get(c, 0.0))
    out = {n: float(intensities[n]) for n in net.nodes}
    # chord contributions: flow leaving each endpoint
    for c in tree.chords:
        e = net.edges[c]
        out[e.i] += flows[c]
        out[e.k] -= flows[c]
    for v in reversed(tree.order[1:]):
        p, eid = tree.parent[v]
        f = -out[v]                 # must leave v towards p
        q = f * net.edges[eid].sign_at(v)
        flows[eid] = q
        out[p] -= f                 # enters p
    return flows


def _choice(edge, choices):
    return choices.get(edge.id, edge.choice) if choices else edge.choice


def _control(edge, controls):
    if controls and edge.id in controls:
        return controls[edge.id]
    return edge.control


def transfer(edge, p_from, from_node, q, gas, choices=None, controls=None, ratios=None):
    """Pressure at the far end of `edge` seen from `from_node`.

    `ratios` may override the ratio of compressor stations (relaxed search).
    """
    if ratios and edge.id in ratios:
        s = ratios[edge.id]
        return p_from * s if from_node == edge.i else p_from / s
    ch, ct = _choice(edge, choices), _control(edge, controls)
    if from_node == edge.i:
        return edge_transfer(edge, p_from, q, gas, ch, ct)
    return edge_inverse_transfer(edge, p_from, q, gas, ch, ct)


def propagate_state(net: Network, tree: TreeDecomposition, chord_flows, intensities, root_pressure,
                    choices=None, controls=None, gas: GasProperties | None = None, ratios=None):
    """Determine flows and pressures for given chord flows.

    Returns (state, closure_errors) where closure_errors[c] is the pressure
    at the chord's far end computed through the chord minus the value
    obtained through the tree.
    """
    gas = gas or GasProperties()
    flows = tree_flows(net, tree, chord_flows, intensities)
    pressures = {tree.root: float(root_pressure)}
    for v in tree.order[1:]:
        p, eid = tree.parent[v]
        try:
            pressures[v] = transfer(net.edges[eid], pressures[p], p, flows[eid], gas, choices, controls, ratios)
        except PressureCollapse as exc:
            raise PressureCollapse(f"edge {eid}: {exc}", eid) from exc
    closure = {}
    for c in tree.chords:
        e = net.edges[c]
        try:
            pk = transfer(e, pressures[e.i], e.i, flows[c], gas, choices, controls, ratios)
        except PressureCollapse as exc:
            raise PressureCollapse(f"chord {c}: {exc}", c) from exc
        closure[c] = pk - pressures[e.k]
    state = NetworkState(pressures, {n: float(intensities[n]) for n in net.nodes}, flows)
    return state, closure


def _cycle_is_pipe_only(net, tree, c):
    return all(net.edges[e].kind in ("pipe", "contract_link", "shutoff_valve")
               for e, _ in tree.fundamental_cycles[c])


def cycles_pipe_only(net, tree) -> bool:
    """True when no chord cycle contains a station or control valve."""
    return all(_cycle_is_pipe_only(net, tree, c) for c in tree.chords)


def solve_flows(net, tree, intensities, gas=None, initial=None, max_iter=50) -> dict:
    """Flows of a network whose chord cycles contain only pipes.

    Such flows do not depend on pressure levels or station controls, so they
    are found from the squared-pressure closure alone.
    """
    gas = gas or GasProperties()
    if not cycles_pipe_only(net, tree):
        raise ValueError("flows depend on controls: a chord cycle contains active equipment")
    chords = list(tree.chords)
    x = np.array([float((initial or {}).get(c, 0.0)) for c in chords])
    if chords:
        def fun(xv):
            fl = tree_flows(net, tree, dict(zip(chords, xv)), intensities)
            sq = squared_closure(net, tree, fl, gas)
            return np.array([sq[c] for c in chords])
        scale = max(1.0, max(abs(v) for v in intensities.values()) if intensities else 1.0)
        x = _newton(fun, x, 1e-12 * scale ** 2, max_iter)
        if np.max(np.abs(fun(x))) > 1e-6 * scale ** 2:
            raise NoConvergence("squared closure did not converge")
    return tree_flows(net, tree, dict(zip(chords, x)), intensities)


def squared_closure(net, tree, flows, gas):
    """Pressure-level independent closure of pipe-only cycles: sum of signed k l q|q| drops."""
    from ..hydraulics import edge_pipe_coefficient
    out = {}
    for c in tree.chords:
        tot = 0.0
        for eid, sgn in tree.fundamental_cycles[c]:
            e = net.edges[eid]
            if e.kind == "pipe":
                q = flows[eid]
                tot += sgn * edge_pipe_coefficient(e, gas, q) * e.pipe.length * q * abs(q)
        out[c] = tot
    return out


def solve_hydraulic_state(net: Network, tree: TreeDecomposition | None, intensities, root_pressure,
                          choices=None, controls=None, gas=None, tol=0.01, max_iter=50,
                          initial=None, ratios=None) -> Solution:
    """Newton iteration on chord flows until every closure error is below `tol` bar."""
    gas = gas or GasProperties()
    root = tree.root if tree is not None else next(n for n, v in net.nodes.items() if "root" in v.roles)
    tree = tree_for(net, root, choices) if tree is None else tree
    chords = list(tree.chords)
    pipe_only = all(_cycle_is_pipe_only(net, tree, c) for c in chords)
    x = np.array([float((initial or {}).get(c, 0.0)) for c in chords])

    def residual(xv):
        cf = dict(zip(chords, xv))
        state, clo = propagate_state(net, tree, cf, intensities, root_pressure, choices, controls, gas, ratios)
        return state, clo, np.array([clo[c] for c in chords])

    def sq_residual(xv):
        flows = tree_flows(net, tree, dict(zip(chords, xv)), intensities)
        sq = squared_closure(net, tree, flows, gas)
        return np.array([sq[c] for c in chords])

    if not chords:
        state, clo, _ = residual(x)
        return _finish(net, state, clo, choices, controls, tol, 0)

    if pipe_only:
        # closure does not depend on pressure levels: solve on squared drops first
        x = _newton(sq_residual, x, 1e-10 * max(1.0, float(root_pressure) ** 2), max_iter)
    best = None
    it = 0
    for it in range(max_iter + 1):
        try:
            state, clo, r = residual(x)
        except PressureCollapse:
            if best is None:
                raise
            x = 0.5 * (x + best[0])
            continue
        nrm = float(np.max(np.abs(r)))
        if best is None or nrm < best[1]:
            best = (x.copy(), nrm, state, clo)
        if nrm < tol * 1e-3:
            break
        J = _fd_jacobian(lambda v: residual(v)[2], x, r)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
        lam = 1.0
        while lam > 1e-4:
            try:
                r_new = residual(x + lam * step)[2]
                if np.max(np.abs(r_new)) < nrm or lam < 1e-3:
                    break
            except PressureCollapse:
                pass
            lam *= 0.5
        x = x + lam * step
    xb, nrm, state, clo = best
    sol = _finish(net, state, clo, choices, controls, tol, it)
    if nrm >= tol:
        sol.status = "nonconverged"
        raise NoConvergence(f"closure error {nrm:.3g} bar after {it} iterations", best=sol)
    return sol


def _newton(fun, x, tol, max_iter):
    for _ in range(max_iter):
        r = fun(x)
        if np.max(np.abs(r)) < tol:
            break
        J = _fd_jacobian(fun, x, r)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
        nrm = np.max(np.abs(r))
        lam = 1.0
        while lam > 1e-6 and np.max(np.abs(fun(x + lam * step))) >= nrm:
            lam *= 0.5
        x = x + lam * step
    return x


def _fd_jacobian(fun, x, r0):
    n = len(x)
    J = np.empty((len(r0), n))
    for j in range(n):
        h = 1e-6 * max(1.0, abs(x[j]))
        xp = x.copy()
        xp[j] += h
        try:
            J[:, j] = (fun(xp) - r0) / h
        except PressureCollapse:
            xp[j] -= 2 * h
            J[:, j] = (r0 - fun(xp)) / h
    return J


def _finish(net, state, closure, choices, controls, tol, iterations):
    ch = {e.id: _choice(e, choices) for e in net.edges.values() if e.n_choices > 1}
    ct = {e.id: _control(e, controls) for e in net.edges.values() if _control(e, controls) is not None}
    report = feasibility_report(net, state, ct, ch)
    ok = all(s >= -FEAS_TOL for _, _, s in report) and all(abs(v) < tol for v in closure.values())
    return Solution(state, ch, ct, math.nan, report, dict(closure),
                    "feasible" if ok else "infeasible", {"iterations": iterations})


def feasibility_report(net: Network, state: NetworkState, controls=None, choices=None) -> list:
    """Slacks of every box constraint as (kind, id, slack); negative means violated."""
    out = []
    for n, node in net.nodes.items():
        lo, hi = node.pressure_bounds
        p = state.pressures.get(n)
        if p is not None:
            out.append(("pressure_min", n, p - lo))
            if hi < math.inf:
                out.append(("pressure_max", n, hi - p))
        lo, hi = node.intensity_bounds
        q = state.intensities[n]
        if lo > -math.inf:
            out.append(("intensity_min", n, q - lo))
        if hi < math.inf:
            out.append(("intensity_max", n, hi - q))
    for eid, e in net.edges.items():
        lo, hi = e.flow_bounds
        q = state.flows[eid]
        if lo > -math.inf:
            out.append(("flow_min", eid, q - lo))
        if hi < math.inf:
            out.append(("flow_max", eid, hi - q))
        c = (controls or {}).get(eid)
        if c is not None and e.kind in ("compressor_station", "control_valve"):
            out.append(("control_min", eid, c - e.control_bounds[0]))
            out.append(("control_max", eid, e.control_bounds[1] - c))
        if e.kind == "compressor_station" and e.side and "ratio" in e.side:
            pi, pk = state.pressures.get(e.i), state.pressures.get(e.k)
            if pi and pk:
                lo, hi = e.side["ratio"]
                sch = e.choices[(choices or {}).get(eid, e.choice)]
                if not sch.is_bypass:
                    out.append(("ratio_min", eid, pk / pi - lo))
                    out.append(("ratio_max", eid, hi - pk / pi))
    return out
