"""Best-bound-first branch-and-bound over discrete edge choices."""
from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass

from ..errors import BudgetExhausted, Infeasible
from ..network import natural_key
from .evaluate import Evaluator, SearchSpace, exhaustive
from .objective import Objective


@dataclass
class Budget:
    max_nodes: int = 200_000
    gap: float = 0.0              # relative gap accepted for early stop
    exhaustive_limit: int = 0     # enumerate outright when the space is this small
    time_limit: float | None = None


def _gap(incumbent, bound):
    if incumbent is None or math.isinf(incumbent):
        return math.inf
    return max(0.0, incumbent - bound) / max(1.0, abs(incumbent))


def branch_and_bound(net, space: SearchSpace, obj: Objective, budget: Budget | None = None,
                     gas=None, tol=0.01, evaluator: Evaluator | None = None):
    """Minimize `obj` over the discrete choices in `space`.

    Nodes are partial assignments ordered by lower bound (fixed terms exact,
    open terms at their cheapest choice). A node is discarded when its bound
    cannot beat the incumbent or when the relaxed pressure check (open
    stations get the hull of their ratio boxes) already fails.
    """
    budget = budget or Budget()
    ev = evaluator or Evaluator(net, space, obj, gas, tol)
    allowed = {e: tuple(space.discrete_choices[e]) for e in ev.discrete}
    history = []

    if space.size <= budget.exhaustive_limit:
        best = exhaustive(ev)
        if best is None:
            raise Infeasible("no feasible assignment in the search space")
        best.status = "optimal"
        best.info.update(nodes=space.size, gap=0.0, history=[best.objective_value],
                         evaluations=ev.evaluations, method="bnb-exhaustive")
        return best

    def spread(eid, fixed):
        vals = [obj.edge_value(eid, d) for d in allowed[eid]]
        if any(v is None for v in vals):
            return 0.0
        return max(vals) - min(vals)

    t0 = time.monotonic()
    counter = itertools.count()
    root_bound = obj.lower_bound(allowed, {})
    heap = [(root_bound, 0, next(counter), {})]
    incumbent = None
    inc_val = math.inf
    nodes = 0
    while heap:
        bound, _, _, fixed = heapq.heappop(heap)
        if bound >= inc_val - 1e-12 * max(1.0, abs(inc_val)):
            continue
        if _gap(inc_val, bound) <= budget.gap and incumbent is not None and budget.gap > 0:
            heap.append((bound, 0, 0, fixed))
            break
        nodes += 1
        if nodes > budget.max_nodes or (budget.time_limit and time.monotonic() - t0 > budget.time_limit):
            heap.append((bound, 0, 0, fixed))
            break
        if not ev.relaxed_feasible(fixed, allowed):
            continue
        open_edges = [e for e in ev.discrete if e not in fixed]
        if not open_edges:
            sol = ev.evaluate(fixed)
            if sol.feasible and sol.objective_value < inc_val:
                incumbent, inc_val = sol, sol.objective_value
                history.append(inc_val)
            continue
        # branch on the open edge whose choice moves the bound the most
        eid = max(sorted(open_edges, key=natural_key), key=lambda e: spread(e, fixed))
        for d in allowed[eid]:
            child = dict(fixed)
            child[eid] = d
            b = obj.lower_bound(allowed, child)
            if b < inc_val:
                heapq.heappush(heap, (b, -len(child), next(counter), child))

    best_bound = min([h[0] for h in heap], default=inc_val)
    gap = _gap(inc_val, min(best_bound, inc_val))
    info = dict(nodes=nodes, gap=gap, history=history, evaluations=ev.evaluations, method="bnb",
                bound=min(best_bound, inc_val))
    if incumbent is None:
        if heap:
            raise BudgetExhausted("budget exhausted before a feasible assignment was found",
                                  None, math.inf)
        raise Infeasible("no feasible assignment in the search space")
    incumbent.info.update(info)
    if heap and gap > budget.gap:
        incumbent.status = "feasible"
        raise BudgetExhausted(f"budget exhausted with gap {gap:.3g}", incumbent, gap)
    incumbent.status = "optimal" if not heap or gap == 0 else "feasible"
    return incumbent

