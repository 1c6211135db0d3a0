"""Instance generators and independent oracles shared by the tests."""
import math
import random
from importlib import resources

import numpy as np

from gasnetopt.hydraulics import CompressorScheme, MachineGroup, PipeSpec
from gasnetopt.network import Edge, Network, NetworkState, Node, build_network, conservation_residual
from gasnetopt.scenario import ScenarioFile, parse_scenario


def fixture_text() -> str:
    return resources.files("gasnetopt").joinpath("data/central_ring.scn").read_text(encoding="utf-8")


def fixture_scenario() -> ScenarioFile:
    return parse_scenario(fixture_text())


# -- graphs -----------------------------------------------------------------------------------
def random_connected(seed, n_min=2, n_max=8, extra_max=4) -> Network:
    rng = random.Random(seed)
    n = rng.randint(n_min, n_max)
    ids = [f"n{j}" for j in range(n)]
    edges = [Edge(f"e{j}", ids[rng.randrange(j)], ids[j]) for j in range(1, n)]
    if n > 1:
        for j in range(rng.randint(0, extra_max)):
            a, b = rng.sample(ids, 2)
            edges.append(Edge(f"x{j}", a, b))
    return build_network([Node(i) for i in ids], edges)


# -- hydraulic instances with stations ---------------------------------------------------------------
def _scheme(rng):
    p, s = rng.choice([(0, 0), (1, 1), (2, 1), (1, 2), (3, 1), (2, 2)])
    mw = rng.choice([3.0, 4.0, 5.0, 6.0, 8.0])
    return CompressorScheme((MachineGroup(rng.choice(["turbine", "electro"]), mw, 6, p, s),),
                            station_efficiency=rng.choice([0.8, 0.9, 1.0]))


def random_station_instance(seed, max_stations=4, max_schemes=3, ring=None):
    """Random network with up to 4 stations of up to 3 schemes, plus a search space.

    A line of pipes leaves the supply root; stations sit on some line
    edges, side branches carry demand and an optional pipe-only loop makes
    a chord. Pressure windows are cut around the state of one random
    reference assignment, so at least that assignment is feasible.
    """
    from gasnetopt.netopt.evaluate import Evaluator, SearchSpace
    from gasnetopt.netopt.objective import make_objective

    rng = random.Random(seed)
    ns = rng.randint(1, max_stations)
    nodes = {"r": Node("r", pressure_bounds=(0.0, 80.0), roles=frozenset({"root"}))}
    edges = []
    prev = "r"
    demand = {}
    k = 0
    for j in range(ns):
        a, b = f"a{j}", f"b{j}"
        nodes[a] = Node(a, pressure_bounds=(0.0, 80.0))
        nodes[b] = Node(b, pressure_bounds=(0.0, 80.0))
        edges.append(Edge(f"p{k}", prev, a, "pipe", pipe=PipeSpec(rng.uniform(20, 80), k_D_override=rng.uniform(0.002, 0.01))))
        k += 1
        m = rng.randint(2, max_schemes)
        schemes = tuple(_scheme(rng) for _ in range(m))
        edges.append(Edge(f"CS{j}", a, b, "compressor_station", (0.0, math.inf), choices=schemes,
                          choice=0, control=1.0))
        d = f"d{j}"
        nodes[d] = Node(d, pressure_bounds=(0.0, 80.0))
        demand[d] = rng.uniform(1, 8)
        edges.append(Edge(f"p{k}", b, d, "pipe", pipe=PipeSpec(rng.uniform(10, 50), k_D_override=rng.uniform(0.002, 0.01))))
        k += 1
        prev = b
    if ring if ring is not None else rng.random() < 0.5:
        # a second, pipe-only route from the root to the first station inlet
        nodes["m"] = Node("m", pressure_bounds=(0.0, 80.0))
        edges.append(Edge(f"p{k}", "r", "m", "pipe", pipe=PipeSpec(rng.uniform(30, 90), k_D_override=0.01)))
        edges.append(Edge(f"p{k + 2}", "m", "a0", "pipe", pipe=PipeSpec(rng.uniform(30, 90), k_D_override=0.01)))
    tail = "t"
    nodes[tail] = Node(tail, pressure_bounds=(0.0, 80.0))
    demand[tail] = rng.uniform(2, 10)
    edges.append(Edge(f"p{k + 1}", prev, tail, "pipe", pipe=PipeSpec(rng.uniform(20, 60), k_D_override=rng.uniform(0.002, 0.01))))
    total = sum(demand.values())
    for n, q in demand.items():
        nodes[n] = Node(n, (q, q), (0.0, 80.0), q)
    nodes["r"] = Node("r", (-total, -total), (0.0, 80.0), -total, roles=frozenset({"root"}))
    net = build_network(list(nodes.values()), edges)
    root_p = rng.uniform(40, 50)
    space = SearchSpace.all_stations(net, "r", root_p)
    obj = make_objective("power_min", net)
    ev = Evaluator(net, space, obj)
    ref = None
    for _ in range(10):
        cand = {e: rng.choice(v) for e, v in space.discrete_choices.items()}
        s = ev.evaluate(cand)
        if s.feasible:
            ref = s
            break
    if ref is not None:
        upd = {}
        for n in demand:
            p = ref.state.pressures[n]
            lo = max(0.0, p - rng.uniform(0.0, 4.0))
            upd[n] = Node(n, (demand[n], demand[n]), (lo, 80.0), demand[n])
        net = net.with_nodes(**upd)
        space = SearchSpace.all_stations(net, "r", root_p)
        obj = make_objective("power_min", net)
    return net, space, obj


def balanced_hydraulic_state_ok(net, state, tol=1e-9) -> bool:
    return all(abs(r) < tol for r in conservation_residual(net, state).values())


# -- min-cost flow instances ---------------------------------------------------------------------------
def random_flow_problem(rng, kinds=("linear", "quadratic", "cubic"), n_max=6):
    from gasnetopt.mincost import EdgeCost, FlowProblem

    n = int(rng.integers(2, n_max + 1))
    pairs = [(int(rng.integers(0, v)), v) for v in range(1, n)]
    for _ in range(int(rng.integers(0, 5))):
        a, b = rng.choice(n, 2, replace=False)
        pairs.append((int(a), int(b)))
    Q = rng.uniform(-5, 5, n)
    Q -= Q.mean()
    nodes = [Node(str(j), intensity=float(Q[j])) for j in range(n)]
    es, costs = [], {}
    for j, (a, b) in enumerate(pairs):
        lo = float(rng.choice([-math.inf, -10, 0]))
        hi = float(rng.choice([10, 20, math.inf]))
        kind = str(rng.choice(list(kinds)))
        if kind == "linear" and (math.isinf(lo) or math.isinf(hi)):
            lo, hi = -15.0, 15.0
        es.append(Edge(f"e{j}", str(a), str(b), flow_bounds=(lo, hi)))
        c = float(rng.uniform(0.1, 3))
        b0 = float(rng.uniform(-2, 2))
        costs[f"e{j}"] = {"linear": EdgeCost.linear(b0), "quadratic": EdgeCost.quadratic(c, b0),
                          "cubic": EdgeCost.cubic(c, b0)}[kind]
    return FlowProblem(Network(nodes, es), costs)


def cvx_oracle(p):
    """Solve the same problem with an interior-point conic solver.

    Returns (objective, status, flows, potentials). The solver's equality
    duals y satisfy grad F + A^T y = 0, so potentials are -y.
    """
    import cvxpy as cp

    net = p.network
    E = list(net.edges)
    x = cp.Variable(len(E))
    cons, obj = [], 0
    for j, e in enumerate(E):
        lo, hi = p.bounds(e)
        c = p.costs[e]
        if math.isfinite(lo):
            cons.append(x[j] >= lo)
        if math.isfinite(hi):
            cons.append(x[j] <= hi)
        co = c.coefficients
        if c.kind == "linear":
            obj += co[0] * x[j]
        elif c.kind == "quadratic":
            obj += co[0] * cp.square(x[j]) + co[1] * x[j]
        else:
            obj += co[0] * cp.power(cp.abs(x[j]), 3) + co[1] * x[j]
    balance = {}
    for n in net.nodes:
        terms = [x[j] * (1 if net.edges[e].i == n else -1) for j, e in enumerate(E) if n in (net.edges[e].i, net.edges[e].k)]
        balance[n] = sum(terms) + p.intensities[n] == 0
    pr = cp.Problem(cp.Minimize(obj), cons + list(balance.values()))
    pr.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    if pr.status != "optimal":
        return pr.value, pr.status, None, None
    flows = {e: float(x.value[j]) for j, e in enumerate(E)}
    pots = {n: -float(np.atleast_1d(c.dual_value)[0]) for n, c in balance.items()}
    return pr.value, pr.status, flows, pots


def polish_oracle(p, flows, pots, snap=1e-5):
    """Crossover of an interior-point answer to an exact KKT point.

    Flows within `snap` of a bound are fixed there; for the other edges the
    tension must equal the cost derivative. Together with conservation this
    is solved by least squares from the oracle's own values. Only equalities
    are enforced, so the sign conditions remain for the certifier to check.
    Returns (flows, potentials, largest equation residual).
    """
    from scipy.optimize import least_squares

    net = p.network
    nodes = list(net.nodes)
    fixed, free = {}, []
    for e, q in flows.items():
        lo, hi = p.bounds(e)
        if abs(q - lo) < snap:
            fixed[e] = lo
        elif abs(q - hi) < snap:
            fixed[e] = hi
        else:
            free.append(e)
    ref = nodes[0]
    unknown_nodes = nodes[1:]

    def unpack(x):
        pot = {ref: pots[ref]}
        pot.update(zip(unknown_nodes, x[:len(unknown_nodes)]))
        fl = dict(fixed)
        fl.update(zip(free, x[len(unknown_nodes):]))
        return fl, pot

    def residual(x):
        fl, pot = unpack(x)
        r = [p.intensities[n] + sum(fl[e.id] * e.sign_at(n) for e in net.incident(n)) for n in nodes]
        r += [pot[net.edges[e].i] - pot[net.edges[e].k] - p.costs[e].derivative(fl[e]) for e in free]
        return np.array(r)

    x0 = np.array([pots[n] for n in unknown_nodes] + [flows[e] for e in free], dtype=float)
    res = least_squares(residual, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    fl, pot = unpack(res.x)
    return fl, pot, float(np.max(np.abs(residual(res.x)))) if len(res.fun) else 0.0


# -- tracking states ---------------------------------------------------------------------------------
def random_flow_state(seed, n_min=3, n_max=10):
    """Balanced state with acyclic flows (every gas parcel traces back to a supply)."""
    rng = random.Random(seed)
    net = random_connected(seed, n_min, n_max, 6)
    rank = {n: j for j, n in enumerate(rng.sample(sorted(net.nodes), len(net.nodes)))}
    flows = {}
    for eid, e in net.edges.items():
        mag = 0.0 if rng.random() < 0.1 else rng.uniform(0.5, 10)
        flows[eid] = mag if rank[e.i] < rank[e.k] else -mag
    res = conservation_residual(net, NetworkState({}, {n: 0.0 for n in net.nodes}, flows))
    q = {n: -r for n, r in res.items()}
    return net, NetworkState({}, q, flows)


def particle_fractions(net, state, particles, rng, max_steps=200):
    """Monte-Carlo oracle: release particles at supplies and route them downstream.

    At every node a particle either leaves with the local demand or follows
    an outgoing edge, chosen with probability proportional to flow. All
    particles move in lockstep. Returns (node -> {supply: share of visiting
    particles}, node -> visit count).
    """
    nodes = sorted(net.nodes)
    idx = {n: j for j, n in enumerate(nodes)}
    n = len(nodes)
    # row j: exit probability first, then one column per target node
    trans = np.zeros((n, n + 1))
    for j, v in enumerate(nodes):
        trans[j, 0] = max(0.0, state.intensities[v])
    for eid, e in net.edges.items():
        q = state.flows[eid]
        if q > 0:
            trans[idx[e.i], 1 + idx[e.k]] += q
        elif q < 0:
            trans[idx[e.k], 1 + idx[e.i]] += -q
    tot = trans.sum(axis=1, keepdims=True)
    trans = np.divide(trans, tot, out=np.zeros_like(trans), where=tot > 0)
    trans[tot[:, 0] == 0, 0] = 1.0
    cum = np.cumsum(trans, axis=1)
    supplies = sorted(v for v in nodes if state.intensities[v] < 0)
    weights = np.array([-state.intensities[s] for s in supplies])
    src = rng.choice(len(supplies), size=particles, p=weights / weights.sum())
    pos = np.array([idx[supplies[k]] for k in range(len(supplies))])[src]
    counts = np.zeros((n, len(supplies)))
    alive = np.ones(particles, dtype=bool)
    for _ in range(max_steps):
        np.add.at(counts, (pos[alive], src[alive]), 1)
        r = rng.random(alive.sum())
        step = (cum[pos[alive]] < r[:, None]).sum(axis=1)
        step = np.minimum(step, n)
        moving = step > 0
        where = np.flatnonzero(alive)
        pos[where[moving]] = step[moving] - 1
        alive[where[~moving]] = False
        if not alive.any():
            break
    visits = counts.sum(axis=1)
    shares = {v: {s: counts[j, k] / visits[j] for k, s in enumerate(supplies)}
              for j, v in enumerate(nodes) if visits[j] > 0}
    return shares, {v: int(visits[j]) for j, v in enumerate(nodes)}


# -- scenarios -------------------------------------------------------------------------------------------
_WORDS = ["a", "b", "north", "s1", "x-2", "N7", "42"]


def random_scenario(seed) -> ScenarioFile:
    """Arbitrary well-typed scenario content (not necessarily a valid network)."""
    from gasnetopt.scenario import KV_SCHEMAS, TABLE_SCHEMAS

    rng = random.Random(seed)

    def value(typ):
        if rng.random() < 0.2:
            return None
        if typ == "str":
            return rng.choice(_WORDS) + str(rng.randint(0, 99))
        if typ == "int":
            return rng.randint(-5, 50)
        if typ == "float":
            r = rng.random()
            if r < 0.05:
                return math.inf
            if r < 0.1:
                return -math.inf
            return rng.choice([0.0, -0.0, 1.0, 1e-17, 12345.678901234567, rng.uniform(-1e6, 1e6),
                               rng.uniform(0, 1) * 10 ** rng.randint(-12, 12)])
        return tuple(rng.choice(_WORDS) for _ in range(rng.randint(1, 4)))

    scn = ScenarioFile()
    for name, schema in KV_SCHEMAS.items():
        if rng.random() < 0.6:
            scn.sections[name] = {k: value(t) for k, t in schema.items() if rng.random() < 0.7}
    for name, cols in TABLE_SCHEMAS.items():
        if rng.random() < 0.5:
            continue
        from gasnetopt.scenario import REQUIRED
        rows = []
        for _ in range(rng.randint(0, 5)):
            row = {}
            for c, t in cols:
                v = value(t)
                if v is None and c in REQUIRED.get(name, ()):
                    v = value(t) or ("v" if t == "str" else 1 if t == "int" else 1.0 if t == "float" else ("v",))
                row[c] = v
            rows.append(row)
        scn.tables[name] = rows
    return scn


def oracle_instances(count, seed=0, kinds=("linear", "quadratic", "cubic")):
    """`count` random flow problems the conic oracle solves to optimality, with its answers."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        p = random_flow_problem(rng, kinds)
        v, status, flows, pots = cvx_oracle(p)
        if status == "optimal":
            out.append((p, v, flows, pots))
    return out


def perturb_on_cycle(problem, flows, rng, delta):
    """Push `delta` around a fundamental cycle through a strictly convex edge.

    Returns (new flows, the strictly convex edge) or None when no cycle
    holds such an edge. Conservation is preserved.
    """
    from gasnetopt.network import spanning_tree

    net = problem.network
    tr = spanning_tree(net, sorted(net.nodes)[0])
    for chord in tr.chords:
        cyc = tr.fundamental_cycles[chord]
        convex = [e for e, _ in cyc if problem.costs[e].kind in ("quadratic", "cubic")]
        if not convex:
            continue
        target = convex[int(rng.integers(len(convex)))]
        sign = 1.0 if rng.random() < 0.5 else -1.0
        new = dict(flows)
        for e, s in cyc:
            new[e] += sign * s * delta
        return new, target
    return None
