"""Decomposing fractional matchings into integral group-fair matchings.

The feasible set of item-to-block marginals under per-(block, group) bounds
over a laminar group family is an integral polytope: it is exactly the set
of fractional flows of a layered network (source -> items -> per-block group
chains -> blocks -> sink) whose constraint matrix is a network matrix.  The
decomposition walks the faces of that polytope: repeatedly extract a vertex
agreeing with the current point on all tight constraints (found by an
integral feasibility flow with rounded bounds), then step away from it as
far as the polytope allows.  Each step makes at least one new constraint
tight, so the walk ends after at most (#entries + #group arcs) steps.

A classical Birkhoff-von Neumann decomposition over position marginals is
also provided; it is the baseline behavior that ignores group bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Instance, Matching, MatchingMarginal, Policy, RankingMatrix

INTEGRALITY_EPS = 1e-7    # entries this close to 0/1 are snapped before oracle calls
WEIGHT_FLOOR = 1e-10      # decomposition weights below this are dropped


class DecompositionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# laminar forest over groups

@dataclass(frozen=True)
class LaminarForest:
    parent: tuple[int, ...]        # per group index; -1 means the root universe
    minimal_group: tuple[int, ...]  # per item; -1 means directly under the root
    order: tuple[int, ...]         # group indices, children before parents

    @property
    def p(self) -> int:
        return len(self.parent)


def build_forest(instance: Instance) -> LaminarForest:
    groups = instance.groups
    p = len(groups)
    sizes = [len(g.members) for g in groups]
    parent = [-1] * p
    for a in range(p):
        best = -1
        for b in range(p):
            if a == b:
                continue
            if groups[a].member_set <= groups[b].member_set:
                strictly = sizes[b] > sizes[a] or (sizes[b] == sizes[a] and b < a)
                if strictly and (best == -1 or sizes[b] < sizes[best]):
                    best = b
        parent[a] = best
    minimal = [-1] * instance.m
    for i in range(instance.m):
        best = -1
        for g in range(p):
            if i in groups[g].member_set and (best == -1 or sizes[g] < sizes[best]):
                best = g
        minimal[i] = best
    order = sorted(range(p), key=lambda g: (-_depth(parent, g), g))
    return LaminarForest(tuple(parent), tuple(minimal), tuple(order))


def _depth(parent, g):
    d = 0
    while parent[g] != -1:
        g = parent[g]
        d += 1
    return d


# ---------------------------------------------------------------------------
# the layered network

@dataclass(frozen=True, eq=False)
class FlowNetwork:
    """Item -> group-chain -> block network whose flows are fair matchings."""

    instance: Instance
    forest: LaminarForest
    n_nodes: int
    arcs: tuple               # (tail, head, lower, upper), insertion order fixed
    item_arc: np.ndarray      # (m, q) index into arcs
    group_arc: dict           # (group idx, block idx) -> arc index
    source: int
    sink: int

    @property
    def m(self) -> int:
        return self.instance.m

    @property
    def q(self) -> int:
        return self.instance.q


def build_network(instance: Instance) -> FlowNetwork:
    """Build the network for a padded instance (every item gets matched)."""
    if instance.n != instance.m:
        raise DecompositionError(
            "network requires a padded instance with n == m (see pad_instance)"
        )
    forest = build_forest(instance)
    m, q, p = instance.m, instance.q, forest.p
    sizes = instance.block_sizes()

    # structural sanity of the bounds: children lower bounds must fit under
    # every ancestor's upper bound (with the root capped by the block size)
    for j in range(q):
        kids_of = {g: [] for g in range(-1, p)}
        for g in range(p):
            kids_of[forest.parent[g]].append(g)
        for g in range(-1, p):
            low_sum = sum(int(instance.L[j, c]) for c in kids_of[g])
            cap = int(sizes[j]) if g == -1 else int(instance.U[j, g])
            if low_sum > cap:
                raise DecompositionError(
                    f"block {j+1}: children lower bounds sum to {low_sum} "
                    f"exceeding capacity {cap} of their parent"
                )

    source = 0
    items = lambda i: 1 + i
    group_node = lambda g, j: 1 + m + j * (p + 1) + (g if g != -1 else p)
    block_node = lambda j: 1 + m + q * (p + 1) + j
    sink = 1 + m + q * (p + 1) + q
    n_nodes = sink + 1

    arcs = []
    for i in range(m):
        arcs.append((source, items(i), 1, 1))
    item_arc = np.zeros((m, q), dtype=int)
    for i in range(m):
        g = forest.minimal_group[i]
        for j in range(q):
            item_arc[i, j] = len(arcs)
            arcs.append((items(i), group_node(g, j), 0, 1))
    group_arc = {}
    for j in range(q):
        for g in forest.order:
            group_arc[(g, j)] = len(arcs)
            arcs.append(
                (
                    group_node(g, j),
                    group_node(forest.parent[g], j),
                    int(instance.L[j, g]),
                    int(instance.U[j, g]),
                )
            )
    for j in range(q):
        arcs.append((group_node(-1, j), block_node(j), int(sizes[j]), int(sizes[j])))
    for j in range(q):
        arcs.append((block_node(j), sink, 0, m))

    return FlowNetwork(
        instance=instance,
        forest=forest,
        n_nodes=n_nodes,
        arcs=tuple(arcs),
        item_arc=item_arc,
        group_arc=group_arc,
        source=source,
        sink=sink,
    )


# ---------------------------------------------------------------------------
# Dinic max-flow on integer capacities (deterministic: insertion order)

class _Dinic:
    def __init__(self, n):
        self.n = n
        self.head = [[] for _ in range(n)]
        self.to = []
        self.cap = []

    def add(self, u, v, c):
        self.head[u].append(len(self.to))
        self.to.append(v)
        self.cap.append(c)
        self.head[v].append(len(self.to))
        self.to.append(u)
        self.cap.append(0)
        return len(self.to) - 2

    def maxflow(self, s, t):
        flow = 0
        INF = float("inf")
        while True:
            level = [-1] * self.n
            level[s] = 0
            queue = [s]
            for u in queue:
                for e in self.head[u]:
                    if self.cap[e] > 0 and level[self.to[e]] < 0:
                        level[self.to[e]] = level[u] + 1
                        queue.append(self.to[e])
            if level[t] < 0:
                return flow
            it = [0] * self.n

            def dfs(u, pushed):
                if u == t:
                    return pushed
                while it[u] < len(self.head[u]):
                    e = self.head[u][it[u]]
                    v = self.to[e]
                    if self.cap[e] > 0 and level[v] == level[u] + 1:
                        got = dfs(v, min(pushed, self.cap[e]))
                        if got:
                            self.cap[e] -= got
                            self.cap[e ^ 1] += got
                            return got
                    it[u] += 1
                return 0

            while True:
                pushed = dfs(s, INF)
                if not pushed:
                    break
                flow += pushed


def _feasible_flow(n_nodes, arcs, source, sink):
    """Integral flow meeting [lower, upper] arc bounds, or None.

    Standard reduction: close the network with a sink->source arc, shift
    lower bounds into node excesses, and saturate them via max-flow from a
    super source.  Returns per-arc flows aligned with ``arcs``.
    """
    closure_cap = sum(u for (t, _, _, u) in arcs if t == source)
    S, T = n_nodes, n_nodes + 1
    dinic = _Dinic(n_nodes + 2)
    excess = [0] * n_nodes
    edge_ids = []
    for (tail, head, low, up) in arcs:
        edge_ids.append(dinic.add(tail, head, up - low))
        excess[head] += low
        excess[tail] -= low
    dinic.add(sink, source, closure_cap)
    need = 0
    for v in range(n_nodes):
        if excess[v] > 0:
            dinic.add(S, v, excess[v])
            need += excess[v]
        elif excess[v] < 0:
            dinic.add(v, T, -excess[v])
    got = dinic.maxflow(S, T)
    if got != need:
        return None
    flows = []
    for (tail, head, low, up), e in zip(arcs, edge_ids):
        flows.append(low + dinic.cap[e ^ 1])
    return flows


# ---------------------------------------------------------------------------
# vertex oracle and face descent

def _snap(x, eps=INTEGRALITY_EPS):
    y = np.clip(np.asarray(x, dtype=float), 0.0, 1.0).copy()
    y[y <= eps] = 0.0
    y[y >= 1 - eps] = 1.0
    return y


def _group_mass(x, net):
    """Throughput of every (group, block) arc under marginal x."""
    out = {}
    for (g, j), _ in net.group_arc.items():
        members = np.fromiter(net.instance.groups[g].members, dtype=int)
        out[(g, j)] = float(x[members, j].sum())
    return out


def _rounded_bounds(s, lower, upper, eps):
    snapped = round(s) if abs(s - round(s)) <= eps * 4 else s
    lo = max(lower, int(math.floor(snapped)))
    hi = min(upper, int(math.ceil(snapped)))
    return lo, hi


def vertex_oracle(x, net: FlowNetwork, eps=INTEGRALITY_EPS) -> Matching:
    """An integral fair matching on the minimal face containing ``x``.

    Entries of ``x`` within ``eps`` of 0/1 are forced, and every group arc's
    throughput is confined to the integers surrounding its current value, so
    the returned matching keeps every constraint that is tight at ``x``
    tight.  Infeasibility here means ``x`` left the polytope.
    """
    if isinstance(x, MatchingMarginal):
        x = x.entries
    x = _snap(x, eps)
    inst = net.instance
    m, q = net.m, net.q
    mass = _group_mass(x, net)

    arcs = list(net.arcs)
    for i in range(m):
        for j in range(q):
            a = net.item_arc[i, j]
            tail, head, _, _ = arcs[a]
            if x[i, j] >= 1 - eps:
                arcs[a] = (tail, head, 1, 1)
            elif x[i, j] <= eps:
                arcs[a] = (tail, head, 0, 0)
            else:
                arcs[a] = (tail, head, 0, 1)
    for (g, j), a in net.group_arc.items():
        tail, head, low, up = arcs[a]
        lo, hi = _rounded_bounds(mass[(g, j)], low, up, eps)
        if lo > hi:
            raise DecompositionError(
                f"marginal outside the fair polytope at group {g+1}, block {j+1}"
            )
        arcs[a] = (tail, head, lo, hi)

    flows = _feasible_flow(net.n_nodes, arcs, net.source, net.sink)
    if flows is None:
        raise DecompositionError(
            "vertex oracle found no integral matching; the marginal violates "
            "a (group, block) cut beyond tolerance"
        )
    entries = np.zeros((m, q), dtype=np.int8)
    for i in range(m):
        for j in range(q):
            entries[i, j] = flows[net.item_arc[i, j]]
    return Matching(entries, tuple(inst.block_sizes()))


def _tight_count(x, net, eps):
    at_bound = int(np.sum(x <= eps) + np.sum(x >= 1 - eps))
    mass = _group_mass(x, net)
    for (g, j), a in net.group_arc.items():
        _, _, low, up = net.arcs[a]
        s = mass[(g, j)]
        if s <= low + eps:
            at_bound += 1
        if s >= up - eps:
            at_bound += 1
    return at_bound


@dataclass(frozen=True)
class DecompositionResult:
    policy: Policy            # over Matching objects
    iterations: int
    residual: float


def decompose_matching(x, net: FlowNetwork, eps=INTEGRALITY_EPS) -> DecompositionResult:
    """Express ``x`` as a convex combination of integral fair matchings.

    Face descent: take the oracle's vertex v, move from x away from v as far
    as the polytope allows (ratio test over entry and group-arc bounds), give
    v the weight that makes x the convex combination of v and the landing
    point, and recurse on the landing point until it is integral.
    """
    if isinstance(x, MatchingMarginal):
        x = x.entries
    target = np.asarray(x, dtype=float).copy()
    inst = net.instance
    sizes = tuple(inst.block_sizes())
    max_iter = net.m * net.q + net.q * max(1, net.forest.p) + 1

    cur = _snap(target, eps)
    terms = []
    remaining = 1.0
    tight_before = -1
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        tight_now = _tight_count(cur, net, eps)
        if tight_now <= tight_before:
            raise DecompositionError(
                "face descent stalled: tight constraint count did not grow "
                "(tolerances are misconfigured for this input)"
            )
        tight_before = tight_now
        if np.all((cur <= eps) | (cur >= 1 - eps)):
            terms.append((remaining, Matching(np.rint(cur).astype(np.int8), sizes)))
            break
        v = vertex_oracle(cur, net, eps)
        d = cur - v.entries.astype(float)

        t_max = math.inf
        with np.errstate(divide="ignore", invalid="ignore"):
            up_room = np.where(d > eps, (1.0 - cur) / d, math.inf)
            dn_room = np.where(d < -eps, cur / (-d), math.inf)
        t_max = min(t_max, float(np.min(up_room)), float(np.min(dn_room)))
        mass_cur = _group_mass(cur, net)
        mass_v = _group_mass(v.entries.astype(float), net)
        for key, a in net.group_arc.items():
            _, _, low, up = net.arcs[a]
            ds = mass_cur[key] - mass_v[key]
            if ds > eps:
                t_max = min(t_max, (up - mass_cur[key]) / ds)
            elif ds < -eps:
                t_max = min(t_max, (mass_cur[key] - low) / (-ds))
        if not math.isfinite(t_max) or t_max <= 0:
            raise DecompositionError("face descent found no admissible step")

        alpha = t_max / (1.0 + t_max)
        terms.append((alpha * remaining, v))
        remaining *= 1.0 - alpha
        cur = _snap(cur + t_max * d, eps)
    else:
        raise DecompositionError(
            f"decomposition did not converge within {max_iter} iterations"
        )

    kept = [(w, M) for w, M in terms if w > WEIGHT_FLOOR]
    scale = sum(w for w, _ in kept)
    kept = [(w / scale, M) for w, M in kept]
    policy = Policy(tuple(kept))

    recon = np.zeros_like(target)
    for w, M in kept:
        recon += w * M.entries
    residual = float(np.max(np.abs(recon - target)))
    return DecompositionResult(policy=policy, iterations=iterations, residual=residual)


# ---------------------------------------------------------------------------
# Birkhoff-von Neumann decomposition (no group-fairness guarantee)

def _perfect_matching(support):
    """Deterministic augmenting-path matching covering all rows, or None."""
    m = support.shape[0]
    match_col = [-1] * m  # column -> row

    def augment(r, seen):
        for c in range(m):
            if support[r, c] and not seen[c]:
                seen[c] = True
                if match_col[c] == -1 or augment(match_col[c], seen):
                    match_col[c] = r
                    return True
        return False

    for r in range(m):
        if not augment(r, [False] * m):
            return None
    assign = [-1] * m  # row -> column
    for c, r in enumerate(match_col):
        assign[r] = c
    return assign


def birkhoff_decompose(D, support_eps=1e-9) -> Policy:
    """Convex combination of permutation rankings reconstructing ``D``.

    ``D`` must be doubly stochastic (square, unit row and column sums within
    tolerance), i.e. a marginal over a padded instance.  The support
    rankings need not satisfy any group bounds.
    """
    e = np.asarray(D.entries if hasattr(D, "entries") else D, dtype=float).copy()
    m, n = e.shape
    if m != n:
        raise DecompositionError("matrix must be square (pad the instance first)")
    if np.max(np.abs(e.sum(axis=1) - 1)) > 1e-6 or np.max(np.abs(e.sum(axis=0) - 1)) > 1e-6:
        raise DecompositionError("matrix is not doubly stochastic within tolerance")

    terms = []
    for _ in range(n * m + 1):
        if e.max() <= support_eps:
            break
        assign = _perfect_matching(e > support_eps)
        if assign is None:
            raise DecompositionError(
                "no perfect matching on the support; matrix is not doubly "
                "stochastic within tolerance"
            )
        alpha = float(min(e[r, assign[r]] for r in range(m)))
        perm = np.zeros((m, n), dtype=np.int8)
        for r in range(m):
            perm[r, assign[r]] = 1
        terms.append((alpha, RankingMatrix(perm)))
        e -= alpha * perm
        e[e < 0] = 0.0
    else:
        raise DecompositionError("BvN decomposition exceeded its term bound")

    kept = [(w, R) for w, R in terms if w > WEIGHT_FLOOR]
    scale = sum(w for w, _ in kept)
    return Policy(tuple((w / scale, R) for w, R in kept))
