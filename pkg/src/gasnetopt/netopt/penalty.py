"""Tension-penalty search.

Each discrete station gets a free pressure ratio (its tension in
multiplicative form). A continuous problem over these ratios is solved with
a piecewise-linear relaxed cost; a ratio is realizable when some allowed
scheme reaches it inside its control box. Unrealizable ratios are penalized
with a weight that grows each round. The realizing schemes are then scored
exactly and improved by single-edge swaps (1-opt). Seeded restarts guard
against local optima: each restart pins a random subset of stations to a
random scheme before the continuous solve, so it explores a different part
of the relaxation rather than only a different starting point.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize

from ..errors import ChokedFlow, GasNetError, InvalidScheme, Stalled
from ..network import natural_key
from .evaluate import Evaluator, SearchSpace
from .objective import Objective, evaluate_objective
from .propagate import Solution, feasibility_report, propagate_state, tree_flows

DEFAULT_SCHEDULE = tuple(10.0 ** k for k in range(6))   # 1, 10, ..., 1e5


def lower_envelope(points):
    """Lower convex hull of (x, y) points, as sorted vertex arrays."""
    pts = sorted(set(points))
    hull = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    # keep one vertex per abscissa (the lowest)
    xs, ys = [], []
    for x, y in hull:
        if xs and abs(x - xs[-1]) < 1e-15:
            ys[-1] = min(ys[-1], y)
        else:
            xs.append(x)
            ys.append(y)
    return np.array(xs), np.array(ys)


class _Station:
    """Ratio variable of one station with its realizable boxes and relaxed cost."""

    def __init__(self, edge, options, boxes, costs):
        self.edge = edge
        self.options = options          # allowed choice indices with a valid box
        self.boxes = boxes
        self.costs = costs
        self.lo = min(b[0] for b in boxes)
        self.hi = max(b[1] for b in boxes)
        pts = [(b[0], c) for b, c in zip(boxes, costs)] + [(b[1], c) for b, c in zip(boxes, costs)]
        self.env_x, self.env_y = lower_envelope(pts)

    def pinned(self, j) -> "_Station":
        """Copy restricted to the j-th option (used by restarts)."""
        return _Station(self.edge, [self.options[j]], [self.boxes[j]], [self.costs[j]])

    def relaxed_cost(self, s):
        if len(self.env_x) == 1:
            return float(self.env_y[0])
        return float(np.interp(s, self.env_x, self.env_y))

    def distance(self, s, tol=1e-7):
        d = min(max(b[0] - s, s - b[1], 0.0) for b in self.boxes)
        return 0.0 if d <= tol else d

    def realize(self, s, tol=1e-7):
        """Cheapest option whose box holds s, else the nearest box."""
        inside = [(c, i) for i, (b, c) in enumerate(zip(self.boxes, self.costs))
                  if b[0] - tol <= s <= b[1] + tol]
        if inside:
            return self.options[min(inside)[1]]
        near = min(range(len(self.boxes)),
                   key=lambda i: (max(self.boxes[i][0] - s, s - self.boxes[i][1]), self.costs[i]))
        return self.options[near]


def penalty_search(net, space: SearchSpace, obj: Objective, schedule=DEFAULT_SCHEDULE, gas=None,
                   tol=0.01, restarts=5, seed=0, evaluator: Evaluator | None = None,
                   one_opt=True) -> Solution:
    """Penalty method over station ratios; see the module docstring.

    `restarts` counts additional randomized starts after the first one from
    the current ratios. Raises Stalled when no feasible assignment is found.
    """
    ev = evaluator or Evaluator(net, space, obj, gas, tol)
    net, gas = ev.net, ev.gas
    rng = np.random.default_rng(seed)
    base = ev.full({})
    tr = ev.tree(base)
    flows = ev.fixed_flows(base)
    pipe_only = flows is not None
    if flows is None:
        flows = tree_flows(net, tr, {}, ev.intensities)

    stations = []
    fixed_choice = dict(base)
    for e in sorted(net.edges.values(), key=lambda e: natural_key(e.id)):
        eid = e.id
        if e.kind != "compressor_station" or not e.choices:
            continue
        opts, boxes, costs = [], [], []
        for d in space.discrete_choices.get(eid, (base.get(eid, e.choice),)):
            try:
                b = ev.ratio_box(e, flows[eid], d)
            except (InvalidScheme, ChokedFlow):
                continue
            v = obj.edge_value(eid, d)
            if v is None:
                v = obj.edge_terms[eid].bound((d,)) if eid in obj.edge_terms else 0.0
            opts.append(d)
            boxes.append(b)
            costs.append(v)
        if not opts:
            raise Stalled(f"station {eid} has no scheme that can carry its flow")
        stations.append(_Station(e, opts, boxes, costs))
    valves = sorted((e.id for e in net.edges.values() if e.kind == "control_valve"), key=natural_key)
    chords = list(tr.chords) if not pipe_only else []
    ns, nv = len(stations), len(valves)

    cur = list(stations)

    def unpack(x):
        ratios = {st.edge.id: float(x[i]) for i, st in enumerate(cur)}
        ctl = {v: float(x[ns + j]) for j, v in enumerate(valves)}
        cf = ({c: float(x[ns + nv + j]) for j, c in enumerate(chords)} if chords
              else {c: flows[c] for c in tr.chords})
        return ratios, ctl, cf

    memo = {}

    def run(x):
        k = x.tobytes()
        if k not in memo:
            ratios, ctl, cf = unpack(x)
            try:
                st, clo = propagate_state(net, tr, cf, ev.intensities, space.root_pressure,
                                          fixed_choice, ctl, gas, ratios)
                rep = feasibility_report(net, st, ctl, fixed_choice)
                slack = _window_slacks(rep)
                node_val = 0.0
                if obj.node_terms or obj.global_terms:
                    trial = Solution(st, fixed_choice, ctl)
                    node_val = evaluate_objective(obj, trial) - sum(
                        obj.edge_value(e, fixed_choice.get(e, 0)) or 0.0 for e in obj.edge_terms
                        if not obj.edge_terms[e].uses_state)
                memo[k] = (node_val, slack, np.array([clo[c] for c in chords]))
            except (GasNetError, ValueError, ZeroDivisionError):
                memo[k] = (1e9, None, None)
        return memo[k]

    qscale = max(1.0, max(abs(q) for q in ev.intensities.values()))

    def box_bounds():
        lb = [st.lo for st in cur] + [net.edges[v].control_bounds[0] for v in valves]
        ub = [st.hi for st in cur] + [net.edges[v].control_bounds[1] for v in valves]
        lb += [-10 * qscale] * len(chords)
        ub += [10 * qscale] * len(chords)
        return lb, ub

    n_slack = None

    def slack_fun(x):
        s = run(x)[1]
        if s is None:
            return -np.ones(n_slack)
        return s

    def closure_fun(x):
        c = run(x)[2]
        if c is None:
            return np.ones(len(chords))
        return c

    def relaxed(x, w):
        val = run(x)[0]
        for i, st in enumerate(cur):
            val += st.relaxed_cost(x[i]) + w * st.distance(x[i], 0.0) ** 2
        return val

    def start(r):
        x = []
        for st in cur:
            if r == 0:
                e = st.edge
                try:
                    s = ev.ratio_box(e, flows[e.id], base.get(e.id, e.choice))[1]
                except (InvalidScheme, ChokedFlow):
                    s = st.hi
                x.append(min(max(s, st.lo), st.hi))
            else:
                x.append(rng.uniform(st.lo, st.hi))
        for v in valves:
            lo, hi = net.edges[v].control_bounds
            x.append(0.5 * (lo + hi) if r == 0 else rng.uniform(lo, hi))
        x += [flows.get(c, 0.0) for c in chords]
        return np.array(x, dtype=float)

    best = None
    rounds_log = []
    for r in range(restarts + 1):
        if r > 0:
            cur[:] = [st.pinned(int(rng.integers(len(st.options)))) if rng.random() < 0.5 else st
                      for st in stations]
        lb, ub = box_bounds()
        bounds = list(zip(lb, ub))
        x = start(r)
        probe = run(x)[1]
        n_slack = len(probe) if probe is not None else len(_window_slacks(feasibility_report(
            net, _dummy_state(net, tr, flows, ev), {}, fixed_choice)))
        cons = [{"type": "ineq", "fun": slack_fun}]
        if chords:
            cons.append({"type": "eq", "fun": closure_fun})
        rounds = 0
        for w in schedule:
            rounds += 1
            if ns + nv + len(chords) > 0:
                try:
                    res = minimize(relaxed, x, args=(w,), method="SLSQP", bounds=bounds,
                                   constraints=cons, options={"maxiter": 300, "ftol": 1e-9})
                    x = np.clip(res.x, lb, ub)
                except (ValueError, ArithmeticError):
                    pass
            if all(st.distance(x[i]) == 0.0 for i, st in enumerate(cur)):
                break
        rounds_log.append(rounds)
        choice = {st.edge.id: st.realize(x[i]) for i, st in enumerate(cur)
                  if st.edge.id in space.discrete_choices}
        for eid in ev.discrete:
            choice.setdefault(eid, base[eid])
        sol = ev.evaluate(choice)
        if one_opt:
            sol, choice = _one_opt(ev, space, choice, sol)
        if sol.feasible and (best is None or sol.objective_value < best.objective_value - 1e-12):
            best = sol
    if best is None:
        raise Stalled("no feasible assignment after all restarts")
    best.status = "feasible"
    best.info.update(method="penalty", rounds=rounds_log, restarts=restarts,
                     evaluations=ev.evaluations)
    return best


def _window_slacks(rep):
    return np.array([s for kind, _, s in rep if kind.startswith(("pressure", "flow"))])


def _dummy_state(net, tr, flows, ev):
    from ..network import NetworkState
    return NetworkState({n: 1.0 for n in net.nodes}, dict(ev.intensities), dict(flows))


def _one_opt(ev: Evaluator, space: SearchSpace, choice: dict, sol: Solution):
    """Swap single edges to other allowed choices while that improves."""
    cur = sol.objective_value if sol.feasible else math.inf
    improved = True
    while improved:
        improved = False
        for eid in ev.discrete:
            for d in space.discrete_choices[eid]:
                if d == choice[eid]:
                    continue
                trial = dict(choice)
                trial[eid] = d
                s = ev.evaluate(trial)
                if s.feasible and s.objective_value < cur - 1e-12:
                    choice, sol, cur = trial, s, s.objective_value
                    improved = True
    return sol, choice
