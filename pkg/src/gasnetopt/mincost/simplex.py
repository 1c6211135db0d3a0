"""Primal network simplex for linear-cost flows with real-valued data.

Arcs are (tail, head, cost, capacity) over nodes 0..n-1 with lower bound 0;
``supply[v]`` is the net amount that must leave node v. An artificial root
with big-M arcs gives the starting basis; the leaving arc is chosen by the
strongly feasible rule (last blocking arc on the cycle, traversed from the
apex), which rules out cycling under degeneracy.
"""
from __future__ import annotations

import math
from collections import deque

from ..errors import Infeasible, Unbounded

INF = math.inf


def network_simplex(n, supply, arcs, max_pivots=None):
    """Return (flows, potentials) of a min-cost flow.

    Potentials satisfy cost - pi[tail] + pi[head] >= 0 on arcs at zero flow,
    <= 0 on saturated arcs and = 0 in between.
    """
    m = len(arcs)
    tail = [a[0] for a in arcs]
    head = [a[1] for a in arcs]
    cost = [float(a[2]) for a in arcs]
    cap = [float(a[3]) for a in arcs]
    if any(c < 0 for c in cap):
        raise ValueError("negative arc capacity")
    root = n
    big = 1.0 + sum(abs(c) for c in cost)
    bscale = max([1.0] + [abs(s) for s in supply])
    cscale = max([1.0] + [abs(c) for c in cost])
    flow = [0.0] * m
    # artificial arcs, one per node
    for v in range(n):
        if supply[v] >= 0:
            tail.append(v), head.append(root), flow.append(float(supply[v]))
        else:
            tail.append(root), head.append(v), flow.append(float(-supply[v]))
        cost.append(big)
        cap.append(INF)
    total = m + n
    in_tree = [False] * m + [True] * n
    at_upper = [False] * total
    max_pivots = max_pivots or 50 * total * total + 1000
    eps = 1e-11 * cscale

    pivots = 0
    while True:
        parent, depth, pi = _tree(n + 1, root, tail, head, cost, in_tree)
        enter, best = -1, eps
        for a in range(total):
            if in_tree[a]:
                continue
            rc = cost[a] - pi[tail[a]] + pi[head[a]]
            v = -rc if not at_upper[a] else rc
            if v > best:
                enter, best = a, v
        if enter < 0:
            break
        pivots += 1
        if pivots > max_pivots:
            raise RuntimeError("network simplex pivot limit reached")
        # push direction: along the arc when at lower bound, against it when saturated
        if not at_upper[enter]:
            s, r = tail[enter], head[enter]
        else:
            s, r = head[enter], tail[enter]
        # tree paths s -> apex and r -> apex
        a_s, a_r = s, r
        down, up = [], []
        while a_s != a_r:
            if depth[a_s] >= depth[a_r]:
                down.append(a_s)
                a_s = parent[a_s][0]
            else:
                up.append(a_r)
                a_r = parent[a_r][0]
        # cycle in push order: apex -> s (down), entering arc, r -> apex (up)
        cycle = []
        for x in reversed(down):
            arc = parent[x][1]
            cycle.append((arc, +1 if tail[arc] != x else -1))
        cycle.append((enter, +1 if not at_upper[enter] else -1))
        for x in up:
            arc = parent[x][1]
            cycle.append((arc, +1 if tail[arc] == x else -1))
        delta, leave, ldir = INF, -1, 0
        for arc, d in cycle:
            res = cap[arc] - flow[arc] if d > 0 else flow[arc]
            if res <= delta:
                delta, leave, ldir = res, arc, d
        if math.isinf(delta):
            raise Unbounded("negative-cost cycle of unbounded capacity")
        delta = max(delta, 0.0)
        for arc, d in cycle:
            flow[arc] += d * delta
        # snap values that rounding pushed just past a bound
        for arc, _ in cycle:
            if abs(flow[arc]) <= 1e-15 * bscale:
                flow[arc] = 0.0
            elif cap[arc] < INF and abs(flow[arc] - cap[arc]) <= 1e-15 * bscale * max(1.0, cap[arc]):
                flow[arc] = cap[arc]
        flow[leave] = cap[leave] if ldir > 0 else 0.0
        if leave == enter:
            at_upper[enter] = not at_upper[enter]
            continue
        in_tree[leave] = False
        in_tree[enter] = True
        at_upper[enter] = False
        at_upper[leave] = ldir > 0

    infeas = sum(flow[m:])
    if infeas > 1e-9 * bscale:
        raise Infeasible(f"no balanced flow within bounds (unmet {infeas:.6g})")
    parent, depth, pi = _tree(n + 1, root, tail, head, cost, in_tree)
    return flow[:m], pi[:n]


def _tree(nn, root, tail, head, cost, in_tree):
    adj = [[] for _ in range(nn)]
    for a, t in enumerate(in_tree):
        if t:
            adj[tail[a]].append(a)
            adj[head[a]].append(a)
    parent = [None] * nn
    depth = [0] * nn
    pi = [0.0] * nn
    seen = [False] * nn
    seen[root] = True
    dq = deque([root])
    while dq:
        v = dq.popleft()
        for a in adj[v]:
            w = head[a] if tail[a] == v else tail[a]
            if seen[w]:
                continue
            seen[w] = True
            parent[w] = (v, a)
            depth[w] = depth[v] + 1
            # reduced cost zero on tree arcs: pi[tail] - pi[head] = cost
            pi[w] = pi[v] - cost[a] if tail[a] == v else pi[v] + cost[a]
            dq.append(w)
    return parent, depth, pi
