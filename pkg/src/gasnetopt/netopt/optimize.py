"""Front door of the discrete-continuous optimizer and the power report."""
from __future__ import annotations

import math

from ..errors import Infeasible
from ..network import natural_key
from .bnb import Budget, branch_and_bound
from .evaluate import Evaluator, SearchSpace
from .objective import Objective
from .penalty import penalty_search
from .propagate import Solution, solve_hydraulic_state, tree_for

METHODS = ("bnb", "penalty", "staged")


class _StageEvaluator(Evaluator):
    """Evaluator that keeps flows frozen at the values of a previous stage."""

    def __init__(self, *args, stage_flows=None, **kw):
        super().__init__(*args, **kw)
        self.stage_flows = stage_flows

    def fixed_flows(self, choices):
        return self.stage_flows


def staged(net, space: SearchSpace, obj: Objective, gas=None, tol=0.01, budget=None,
           max_rounds=3) -> Solution:
    """Split the problem into a flow stage, a pure discrete stage and a check.

    Flows are computed once for the current configuration; with these flows
    frozen the discrete choices are optimized on the spanning tree; the
    result is then re-solved with the chord solver. When the re-solve moves
    the flows (active equipment inside a cycle), the stage repeats with the
    new flows.
    """
    ev = Evaluator(net, space, obj, gas, tol)
    base = ev.full({})
    flows = ev.fixed_flows(base)
    if flows is None:
        s0 = ev.evaluate({})
        if s0.state is None:
            tr = ev.tree(base)
            flows = solve_hydraulic_state(ev.net, tr, ev.intensities, space.root_pressure, base,
                                          None, ev.gas, tol).state.flows
        else:
            flows = s0.state.flows
    for rnd in range(1, max_rounds + 1):
        sev = _StageEvaluator(net, space, obj, gas, tol, stage_flows=flows)
        sol = branch_and_bound(net, space, obj, budget, gas, tol, evaluator=sev)
        chk = ev.evaluate({e: sol.choices[e] for e in ev.discrete})
        if chk.feasible:
            chk.status = sol.status
            chk.info.update(method="staged", rounds=rnd, nodes=sol.info.get("nodes"),
                            gap=sol.info.get("gap"))
            return chk
        if sol.state is None:
            break
        flows = sol.state.flows
    raise Infeasible("staged method found no configuration that survives re-verification")


def optimize(net, space: SearchSpace, obj: Objective, method="bnb", gas=None, tol=0.01,
             budget: Budget | None = None, seed=0, restarts=5) -> Solution:
    """Optimize `obj` over `space` and re-verify the answer hydraulically.

    The evaluated initial configuration is kept when it is feasible, allowed
    by the space and no worse than the optimizer's answer.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    ev = Evaluator(net, space, obj, gas, tol)
    initial = ev.evaluate({})
    if not ev.discrete:
        if not initial.feasible:
            raise Infeasible("fixed configuration is infeasible", initial.info.get("failing"))
        result = initial
    elif method == "bnb":
        result = branch_and_bound(net, space, obj, budget, gas, tol, evaluator=ev)
    elif method == "penalty":
        result = penalty_search(net, space, obj, gas=gas, tol=tol, restarts=restarts, seed=seed,
                                evaluator=ev)
    else:
        result = staged(net, space, obj, gas, tol, budget)

    in_space = all(initial.choices.get(e, net.edges[e].choice) in space.discrete_choices[e]
                   for e in ev.discrete)
    if initial.feasible and in_space and initial.objective_value <= result.objective_value:
        if initial is not result:
            initial.info.update(result.info)
        result = initial
    verify(ev.net, space, result, ev.gas, tol)
    result.info["initial_objective"] = initial.objective_value if initial.feasible else math.nan
    result.info["initial_choices"] = dict(initial.choices)
    return result


def verify(net, space: SearchSpace, sol: Solution, gas, tol):
    """Re-solve the final configuration and check every bound; raise if it fails."""
    tr = tree_for(net, space.root, sol.choices)
    chk = solve_hydraulic_state(net, tr, sol.state.intensities, space.root_pressure, sol.choices,
                                sol.controls, gas, tol,
                                initial={c: sol.state.flows[c] for c in tr.chords})
    if not chk.feasible:
        bad = [r for r in chk.feasibility_report if r[2] < -1e-9]
        raise Infeasible("final configuration failed re-verification", bad)
    return chk


def power_report(net, before: dict, after: dict) -> dict:
    """Initial/optimal station power, savings and machine-count change.

    `before` and `after` map station id -> choice index.
    """
    rows = []
    p0 = p1 = 0.0
    m0 = m1 = 0
    for e in sorted(net.edges.values(), key=lambda e: natural_key(e.id)):
        if e.kind != "compressor_station" or not e.choices:
            continue
        s0 = e.choices[before.get(e.id, e.choice)]
        s1 = e.choices[after.get(e.id, e.choice)]
        p0 += s0.rated_power
        p1 += s1.rated_power
        m0 += s0.machines
        m1 += s1.machines
        rows.append({"station": e.id, "initial": s0.label, "optimal": s1.label,
                     "changed": s0 != s1, "delta_machines": s1.machines - s0.machines,
                     "initial_power": s0.rated_power, "optimal_power": s1.rated_power})
    savings = (p1 - p0) / p0 * 100 if p0 else 0.0
    return {"initial_power": p0, "optimal_power": p1, "savings_pct": savings,
            "delta_machines": m1 - m0, "stations": rows}
