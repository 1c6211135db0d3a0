"""Search space and exact evaluation of discrete assignments.

A complete assignment of discrete choices is evaluated by computing flows,
checking pressure feasibility on the spanning tree, picking pressures and
controls, and re-verifying the result with the chord solver. Objectives that
depend on the continuous state are then refined with SLSQP over the controls
and free intensities.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from ..errors import ChokedFlow, GasNetError, InvalidScheme, NoConvergence
from ..hydraulics import GasProperties, capped_ratio
from ..network import Network, natural_key
from .feasibility import assign_pressures, controls_from_pressures, tree_feasibility, tree_maps
from .objective import Objective, evaluate_objective
from .propagate import (FEAS_TOL, Solution, cycles_pipe_only, feasibility_report, propagate_state,
                        solve_flows, solve_hydraulic_state, tree_for)


@dataclass
class SearchSpace:
    """Free variables of an optimization run.

    `discrete_choices` maps an edge to the tuple of allowed choice indices;
    edges not listed keep their current choice. `continuous_controls` narrows
    control boxes, `free_intensities` frees node intensities inside a box and
    `chord_flows` bounds chord flows.
    """
    root: str
    root_pressure: float
    discrete_choices: dict = field(default_factory=dict)
    continuous_controls: dict = field(default_factory=dict)
    free_intensities: dict = field(default_factory=dict)
    chord_flows: dict = field(default_factory=dict)

    def validate(self, net: Network):
        if self.root not in net.nodes:
            raise ValueError(f"root {self.root!r} is not a node")
        lo, hi = net.nodes[self.root].pressure_bounds
        if not lo <= self.root_pressure <= hi:
            raise ValueError(f"root pressure {self.root_pressure} outside [{lo}, {hi}]")
        for eid, opts in self.discrete_choices.items():
            if eid not in net.edges:
                raise ValueError(f"unknown discrete edge {eid!r}")
            if not opts:
                raise ValueError(f"edge {eid!r} lists no choices")
            n = net.edges[eid].n_choices
            if any(not 0 <= d < n for d in opts):
                raise ValueError(f"edge {eid!r}: choice outside 0..{n - 1}")

    @property
    def size(self) -> int:
        return math.prod(len(v) for v in self.discrete_choices.values()) if self.discrete_choices else 1

    @classmethod
    def all_stations(cls, net: Network, root, root_pressure, **kw) -> "SearchSpace":
        """Every station (and switchable valve) free over all of its choices."""
        disc = {e.id: tuple(range(e.n_choices)) for e in net.edges.values()
                if e.n_choices > 1 and e.kind in ("compressor_station", "shutoff_valve")}
        return cls(root, root_pressure, disc, **kw)


def _key(choices: dict) -> tuple:
    return tuple(sorted(choices.items()))


class Evaluator:
    """Exact, cached evaluation of complete discrete assignments."""

    def __init__(self, net: Network, space: SearchSpace, obj: Objective, gas=None, tol=0.01,
                 refine=True):
        space.validate(net)
        self.space = space
        self.gas = gas or GasProperties()
        self.tol = tol
        self.obj = obj
        self.refine = refine
        if space.continuous_controls:
            net = net.with_edges(**{e: replace(net.edges[e], control_bounds=tuple(b))
                                    for e, b in space.continuous_controls.items()})
        self.net = net
        self.discrete = sorted(space.discrete_choices, key=natural_key)
        self.intensities = {n: v.intensity for n, v in net.nodes.items()}
        self._trees = {}
        self._flows = {}
        self.cache = {}
        self.evaluations = 0

    # -- helpers --------------------------------------------------------------
    def full(self, partial: dict) -> dict:
        """Choices for every multi-choice edge, defaults filled in."""
        ch = {e.id: e.choice for e in self.net.edges.values() if e.n_choices > 1}
        ch.update(partial)
        return ch

    def tree(self, choices):
        tr = tree_for(self.net, self.space.root, choices)
        key = tuple(tr.chords)
        return self._trees.setdefault(key, tr)

    def fixed_flows(self, choices):
        """Flows when they do not depend on controls, else None."""
        tr = self.tree(choices)
        if not cycles_pipe_only(self.net, tr):
            return None
        key = tuple(tr.chords)
        if key not in self._flows:
            self._flows[key] = solve_flows(self.net, tr, self.intensities, self.gas)
        return self._flows[key]

    def ratio_box(self, edge, flow, d):
        sch = edge.choices[d]
        if sch.is_bypass:
            return (1.0, 1.0)
        cap = edge.side["ratio"][1] if edge.side and "ratio" in edge.side else None
        s_cap = capped_ratio(flow, self.gas, sch, cap)
        lo, hi = edge.control_bounds
        return (1 + lo * (s_cap - 1), 1 + hi * (s_cap - 1))

    def _infeasible(self, choices, reason, failing=()):
        return Solution(None, dict(choices), {}, math.inf, [], {}, "infeasible",
                        {"reason": reason, "failing": list(failing)})

    # -- relaxation used by branch-and-bound -----------------------------------
    def relaxed_feasible(self, fixed: dict, allowed: dict) -> bool:
        """Necessary condition for a feasible completion of `fixed`.

        Unassigned stations get the hull of their allowed ratio boxes. Only
        used when flows are independent of the open choices; otherwise it
        cannot prune and returns True.
        """
        if self.space.free_intensities:
            return True
        valves = [e for e in allowed if self.net.edges[e].kind == "shutoff_valve" and e not in fixed]
        if valves:
            return True
        choices = self.full(fixed)
        try:
            flows = self.fixed_flows(choices)
        except (GasNetError, np.linalg.LinAlgError):
            return True
        if flows is None:
            return True
        tr = self.tree(choices)
        boxes = {}
        for eid, opts in allowed.items():
            e = self.net.edges[eid]
            if eid in fixed or e.kind != "compressor_station":
                continue
            lo, hi, ok = math.inf, -math.inf, False
            for d in opts:
                try:
                    b = self.ratio_box(e, flows[eid], d)
                except (InvalidScheme, ChokedFlow):
                    continue
                lo, hi, ok = min(lo, b[0]), max(hi, b[1]), True
            boxes[eid] = (lo, hi) if ok else None
        maps = tree_maps(self.net, tr, flows, self.gas, choices, {k: v for k, v in boxes.items() if v})
        for eid, b in boxes.items():
            if b is None and eid in maps:
                maps[eid] = None
        if any(b is None for eid, b in boxes.items() if eid in tr.chords):
            return False
        fe = tree_feasibility(self.net, tr, flows, self.gas, self.space.root_pressure, choices, maps=maps)
        return fe.feasible

    # -- exact evaluation ------------------------------------------------------
    def evaluate(self, partial: dict) -> Solution:
        choices = self.full(partial)
        key = _key(choices)
        if key in self.cache:
            return self.cache[key]
        self.evaluations += 1
        try:
            sol = self._evaluate(choices)
        except (GasNetError, np.linalg.LinAlgError, ValueError) as exc:
            sol = self._infeasible(choices, f"{type(exc).__name__}: {exc}")
        self.cache[key] = sol
        return sol

    def _evaluate(self, choices) -> Solution:
        net, gas, sp = self.net, self.gas, self.space
        tr = self.tree(choices)
        controls = {e.id: (e.control if e.control is not None else 1.0)
                    for e in net.edges.values() if e.kind in ("compressor_station",)}
        flows = self.fixed_flows(choices)
        chord_init = None
        sol = None
        for _ in range(6):
            if flows is None:
                try:
                    s0 = solve_hydraulic_state(net, tr, self.intensities, sp.root_pressure, choices,
                                               controls, gas, self.tol, initial=chord_init)
                except NoConvergence as exc:
                    if exc.best is None:
                        raise
                    s0 = exc.best
                cur = s0.state.flows
            else:
                cur = flows
            fe = tree_feasibility(net, tr, cur, gas, sp.root_pressure, choices)
            if not fe.feasible:
                return self._infeasible(choices, "pressure windows", fe.failing)
            maps = tree_maps(net, tr, cur, gas, choices)
            targets = dict(self.obj.pressure_targets) or {
                n: v.pressure for n, v in net.nodes.items() if v.pressure is not None}
            pressures = assign_pressures(net, tr, fe, maps, sp.root_pressure, targets)
            controls.update(controls_from_pressures(net, pressures, cur, gas, choices))
            chord_init = {c: cur[c] for c in tr.chords}
            try:
                sol = solve_hydraulic_state(net, tr, self.intensities, sp.root_pressure, choices,
                                            controls, gas, self.tol, initial=chord_init)
            except NoConvergence as exc:
                sol = exc.best
            if sol is not None and sol.feasible and self._chords_ok(sol):
                break
            if flows is not None:
                break
            flows_prev = cur
            if sol is None:
                break
            # flows moved with the controls: repeat with the new flows
            if max(abs(sol.state.flows[e] - flows_prev[e]) for e in net.edges) < 1e-9:
                break
        if sol is None or not sol.feasible or not self._chords_ok(sol):
            return self._infeasible(choices, "re-verification failed")
        sol.choices = {e: choices[e] for e in choices}
        sol.objective_value = evaluate_objective(self.obj, sol)
        if self.refine and (self.obj.continuous or sp.free_intensities):
            sol = self.refine_continuous(sol, choices, tr)
        return sol

    def _chords_ok(self, sol) -> bool:
        for c, (lo, hi) in self.space.chord_flows.items():
            q = sol.state.flows.get(c)
            if q is None or q < lo - FEAS_TOL or q > hi + FEAS_TOL:
                return False
        return True

    # -- continuous refinement -------------------------------------------------
    def control_edges(self, choices):
        out = []
        for e in self.net.edges.values():
            if e.kind == "compressor_station" and not e.choices[choices.get(e.id, e.choice)].is_bypass:
                out.append(e.id)
            elif e.kind == "control_valve":
                out.append(e.id)
        return sorted(out, key=natural_key)

    def state_for(self, choices, tr, controls, intensities, chord_init=None):
        """Hydraulic state for given controls and intensities (may raise)."""
        if intensities == self.intensities and cycles_pipe_only(self.net, tr):
            flows = self.fixed_flows(choices)
            cf = {c: flows[c] for c in tr.chords}
            state, clo = propagate_state(self.net, tr, cf, intensities, self.space.root_pressure,
                                         choices, controls, self.gas)
            return state, clo
        sol = solve_hydraulic_state(self.net, tr, intensities, self.space.root_pressure, choices,
                                    controls, self.gas, self.tol, initial=chord_init)
        return sol.state, sol.closure_errors

    def refine_continuous(self, sol: Solution, choices, tr) -> Solution:
        net = self.net
        cedges = self.control_edges(choices)
        fnodes = sorted(self.space.free_intensities, key=natural_key)
        x0 = np.array([sol.controls.get(e, 1.0) for e in cedges]
                      + [sol.state.intensities[n] for n in fnodes], dtype=float)
        if len(x0) == 0:
            return sol
        bounds = [net.edges[e].control_bounds for e in cedges] + [self.space.free_intensities[n] for n in fnodes]
        chord_init = {c: sol.state.flows[c] for c in tr.chords}
        memo = {}

        def unpack(x):
            ctl = dict(sol.controls)
            ctl.update(zip(cedges, map(float, x[:len(cedges)])))
            inten = dict(self.intensities)
            inten.update(zip(fnodes, map(float, x[len(cedges):])))
            return ctl, inten

        def run(x):
            k = x.tobytes()
            if k not in memo:
                ctl, inten = unpack(x)
                try:
                    st, clo = self.state_for(choices, tr, ctl, inten, chord_init)
                    trial = Solution(st, dict(choices), ctl)
                    val = evaluate_objective(self.obj, trial)
                    rep = feasibility_report(net, st, ctl, choices)
                    slack = np.array([s for kind, _, s in rep if not kind.startswith("control")]
                                     + [self.tol - abs(v) for v in clo.values()])
                    memo[k] = (val, slack)
                except (GasNetError, np.linalg.LinAlgError, ValueError):
                    memo[k] = (1e12, -np.ones(1))
            return memo[k]

        cons = [{"type": "ineq", "fun": lambda x: _pad(run(x)[1], x, run(x0)[1].size)}]
        if fnodes:
            fixed_sum = sum(v for n, v in self.intensities.items() if n not in self.space.free_intensities)
            cons.append({"type": "eq", "fun": lambda x: np.array([fixed_sum + x[len(cedges):].sum()])})
        try:
            res = minimize(lambda x: run(x)[0], x0, method="SLSQP", bounds=bounds, constraints=cons,
                           options={"maxiter": 200, "ftol": 1e-10})
            xs = res.x
        except (ValueError, ArithmeticError):
            return sol
        ctl, inten = unpack(np.clip(xs, [b[0] for b in bounds], [b[1] for b in bounds]))
        if fnodes:
            # restore exact balance on the largest free node
            drift = sum(inten.values())
            big = max(fnodes, key=lambda n: abs(inten[n]))
            inten[big] -= drift
        try:
            new = solve_hydraulic_state(net, tr, inten, self.space.root_pressure, choices, ctl,
                                        self.gas, self.tol, initial=chord_init)
        except (GasNetError, np.linalg.LinAlgError):
            return sol
        if not new.feasible or not self._chords_ok(new):
            return sol
        new.choices = dict(choices)
        new.objective_value = evaluate_objective(self.obj, new)
        if new.objective_value < sol.objective_value - 1e-12:
            new.info["refined"] = True
            return new
        return sol

    # -- enumeration -----------------------------------------------------------
    def assignments(self):
        """All complete assignments of the discrete edges, in a fixed order."""
        opts = [self.space.discrete_choices[e] for e in self.discrete]
        for combo in itertools.product(*opts):
            yield dict(zip(self.discrete, combo))


def _pad(slack, x, n):
    if slack.size == n:
        return slack
    return -np.ones(n)


def exhaustive(evaluator: Evaluator) -> Solution:
    """Best feasible assignment by full enumeration (reference oracle)."""
    best = None
    for a in evaluator.assignments():
        s = evaluator.evaluate(a)
        if s.feasible and (best is None or s.objective_value < best.objective_value - 1e-12):
            best = s
    return best
