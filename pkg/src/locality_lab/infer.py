"""Exact inference over binary Bayes nets.

Variable elimination with a min-fill ordering supplies marginals,
conditionals, and pairwise joints; Bayes-ball reachability answers
d-separation queries; minimum vertex cuts of the moralized ancestral graph
yield minimum-size d-separating sets. A brute-force joint enumerator is kept
alongside as the test oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import BayesNet, Cpt, Dag

__all__ = [
    "InferenceError",
    "ZeroProbabilityEvidenceError",
    "TooLargeError",
    "NonSeparableError",
    "Factor",
    "Distribution",
    "eliminate",
    "conditional",
    "conditional_distribution",
    "marginal",
    "pairwise_joint",
    "mutual_information",
    "d_separated",
    "minimal_d_separator",
    "brute_force_joint",
]

# Below this factor magnitude the table is renormalized onto a tracked log
# scale so products of extreme CPT entries cannot underflow silently.
_RESCALE_THRESHOLD = 1e-100
_ZERO_EVIDENCE_FLOOR = 1e-300


class InferenceError(Exception):
    pass


class ZeroProbabilityEvidenceError(InferenceError):
    """The evidence assignment has probability (numerically) zero."""


class TooLargeError(InferenceError):
    """Brute-force enumeration refused beyond 20 nodes."""


class NonSeparableError(InferenceError):
    """No d-separating set exists (the pair is adjacent)."""


@dataclass
class Factor:
    """Nonnegative table over an ordered scope of binary variables.

    ``values`` has one axis per scope entry (axis i belongs to scope[i]);
    ``flat()`` exposes the little-endian layout where scope[0] is the least
    significant bit. ``log_scale`` carries renormalization mass so the true
    table is ``values * exp(log_scale)``.
    """

    scope: tuple[int, ...]
    values: np.ndarray
    log_scale: float = 0.0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (2,) * len(self.scope):
            raise ValueError("factor table shape does not match scope")
        if np.any(self.values < 0):
            raise ValueError("factor entries must be nonnegative")

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1, order="F")

    def _aligned(self, scope: tuple[int, ...]) -> np.ndarray:
        axes = [self.scope.index(v) for v in scope if v in self.scope]
        arr = self.values.transpose(axes)
        shape = tuple(2 if v in self.scope else 1 for v in scope)
        return arr.reshape(shape)

    def product(self, other: "Factor") -> "Factor":
        scope = self.scope + tuple(v for v in other.scope if v not in self.scope)
        values = self._aligned(scope) * other._aligned(scope)
        out = Factor(scope, values, self.log_scale + other.log_scale)
        return out._rescaled()

    def marginalize(self, var: int) -> "Factor":
        axis = self.scope.index(var)
        scope = tuple(v for v in self.scope if v != var)
        return Factor(scope, self.values.sum(axis=axis), self.log_scale)

    def reduce(self, var: int, value: int) -> "Factor":
        axis = self.scope.index(var)
        scope = tuple(v for v in self.scope if v != var)
        return Factor(scope, np.take(self.values, value, axis=axis), self.log_scale)

    def reorder(self, scope: tuple[int, ...]) -> "Factor":
        if set(scope) != set(self.scope):
            raise ValueError("reorder must preserve the scope set")
        return Factor(scope, self._aligned(scope), self.log_scale)

    def _rescaled(self) -> "Factor":
        m = float(self.values.max()) if self.values.size else 0.0
        if 0.0 < m < _RESCALE_THRESHOLD:
            return Factor(self.scope, self.values / m, self.log_scale + math.log(m))
        return self

    def total_log_mass(self) -> float:
        s = float(self.values.sum())
        if s <= 0.0:
            return -math.inf
        return math.log(s) + self.log_scale

    def normalized(self) -> "Factor":
        if self.total_log_mass() < math.log(_ZERO_EVIDENCE_FLOOR):
            raise ZeroProbabilityEvidenceError("normalizer is numerically zero")
        return Factor(self.scope, self.values / self.values.sum(), 0.0)


@dataclass(frozen=True)
class Distribution:
    """Probabilities over an explicit outcome tuple; must normalize."""

    support: tuple[int, ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.support) != len(self.probs):
            raise ValueError("support and probs differ in length")
        if any(not (0.0 <= p <= 1.0) for p in self.probs):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(sum(self.probs) - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")


def _cpt_factor(cpt: Cpt) -> Factor:
    k = len(cpt.parents)
    t = np.asarray(cpt.table, dtype=np.float64).reshape((2,) * k, order="F")
    values = np.stack([1.0 - t, t], axis=-1)
    return Factor(cpt.parents + (cpt.owner,), values)


def _min_fill_order(scopes: list[tuple[int, ...]], to_eliminate: set[int]) -> list[int]:
    adj: dict[int, set[int]] = {}
    for scope in scopes:
        for v in scope:
            adj.setdefault(v, set()).update(u for u in scope if u != v)
    for v in to_eliminate:
        adj.setdefault(v, set())
    order: list[int] = []
    remaining = set(to_eliminate)
    while remaining:
        best = None
        best_fill = None
        for v in sorted(remaining):
            nbrs = [u for u in adj[v] if u != v]
            fill = 0
            for i, u in enumerate(nbrs):
                for w in nbrs[i + 1 :]:
                    if w not in adj[u]:
                        fill += 1
            if best_fill is None or fill < best_fill:
                best, best_fill = v, fill
        assert best is not None
        nbrs = list(adj[best])
        for i, u in enumerate(nbrs):
            for w in nbrs[i + 1 :]:
                adj[u].add(w)
                adj[w].add(u)
        for u in nbrs:
            adj[u].discard(best)
        del adj[best]
        remaining.remove(best)
        order.append(best)
    return order


def eliminate(
    net: BayesNet,
    query: set[int],
    evidence: dict[int, int],
    order_strategy: str = "min_fill",
) -> Factor:
    """Factor proportional to p(query, evidence), scope in ascending id order.

    ``order_strategy`` is ``min_fill`` (default) or ``ascending``; both must
    agree, which the tests exploit as an internal consistency check.
    """
    if query & set(evidence):
        raise ValueError("query and evidence must be disjoint")
    for v in query | set(evidence):
        if not (0 <= v < net.n_nodes):
            raise ValueError(f"variable {v} out of range")

    factors: list[Factor] = []
    for cpt in net.cpts:
        f = _cpt_factor(cpt)
        for var, val in evidence.items():
            if var in f.scope:
                f = f.reduce(var, val)
        factors.append(f)

    to_eliminate = set(range(net.n_nodes)) - query - set(evidence)
    if order_strategy == "min_fill":
        order = _min_fill_order([f.scope for f in factors], to_eliminate)
    elif order_strategy == "ascending":
        order = sorted(to_eliminate)
    else:
        raise ValueError(f"unknown elimination order strategy: {order_strategy}")

    for var in order:
        involved = [f for f in factors if var in f.scope]
        if not involved:
            continue
        factors = [f for f in factors if var not in f.scope]
        prod = involved[0]
        for f in involved[1:]:
            prod = prod.product(f)
        factors.append(prod.marginalize(var))

    result = Factor((), np.float64(1.0).reshape(()))
    for f in factors:
        result = result.product(f)
    return result.reorder(tuple(sorted(query)))


def conditional_distribution(
    net: BayesNet, target: int, evidence: dict[int, int]
) -> Distribution:
    f = eliminate(net, {target}, evidence).normalized()
    p0, p1 = (float(x) for x in f.flat())
    return Distribution((0, 1), (p0, p1))


def conditional(net: BayesNet, target: int, target_value: int, evidence: dict[int, int]) -> float:
    """Exact p(target = target_value | evidence)."""
    return conditional_distribution(net, target, evidence).probs[target_value]


def marginal(net: BayesNet, var: int) -> float:
    """Exact p(var = 1)."""
    return conditional(net, var, 1, {})


def pairwise_joint(net: BayesNet, a: int, b: int) -> Factor:
    """Exact 2x2 joint over {a, b}, normalized, scope ascending."""
    if a == b:
        raise ValueError("pairwise joint needs two distinct variables")
    return eliminate(net, {a, b}, {}).normalized()


def mutual_information(net: BayesNet, a: int, b: int) -> float:
    """Mutual information of a and b in nats, with 0 log 0 taken as 0."""
    joint = pairwise_joint(net, a, b).values
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    mi = 0.0
    for i in (0, 1):
        for j in (0, 1):
            p = joint[i, j]
            if p > 0.0:
                mi += p * math.log(p / (pa[i] * pb[j]))
    return max(mi, 0.0)


# --- d-separation ----------------------------------------------------------


def _ancestors_of(dag: Dag, nodes: set[int]) -> set[int]:
    anc = set(nodes)
    stack = list(nodes)
    while stack:
        v = stack.pop()
        for p in dag.parents[v]:
            if p not in anc:
                anc.add(p)
                stack.append(p)
    return anc


def d_separated(dag: Dag, a: int, b: int, given: set[int]) -> bool:
    """Bayes-ball test: no active path joins a and b given the conditioning set."""
    if a in given or b in given:
        raise ValueError("queried variables must not be conditioned on")
    if a == b:
        raise ValueError("a and b must differ")
    obs_anc = _ancestors_of(dag, set(given)) if given else set()

    # States are (node, direction): "up" means the ball arrived from a child,
    # "down" means it arrived from a parent.
    visited: set[tuple[int, str]] = set()
    stack: list[tuple[int, str]] = [(a, "up")]
    while stack:
        v, direction = stack.pop()
        if (v, direction) in visited:
            continue
        visited.add((v, direction))
        if v == b:
            return False
        if direction == "up" and v not in given:
            for p in dag.parents[v]:
                stack.append((p, "up"))
            for c in dag.children[v]:
                stack.append((c, "down"))
        elif direction == "down":
            if v not in given:
                for c in dag.children[v]:
                    stack.append((c, "down"))
            if v in obs_anc:
                for p in dag.parents[v]:
                    stack.append((p, "up"))
    return True


def _moral_ancestral_graph(dag: Dag, a: int, b: int) -> dict[int, set[int]]:
    keep = _ancestors_of(dag, {a, b})
    adj: dict[int, set[int]] = {v: set() for v in keep}
    for u, v in dag.edges:
        if u in keep and v in keep:
            adj[u].add(v)
            adj[v].add(u)
    for v in keep:
        parents = [p for p in dag.parents[v] if p in keep]
        for i, p in enumerate(parents):
            for q in parents[i + 1 :]:
                adj[p].add(q)
                adj[q].add(p)
    return adj


def _min_vertex_cut_size(
    adj: dict[int, set[int]], removed: set[int], a: int, b: int
) -> int:
    """Unit-vertex-capacity max-flow between a and b (Edmonds-Karp).

    Every vertex except a and b is split into an in/out pair joined by a
    capacity-1 arc; undirected edges become infinite-capacity arcs both ways.
    """
    nodes = [v for v in adj if v not in removed]
    index = {v: i for i, v in enumerate(nodes)}
    n = len(nodes)
    inf = len(nodes) + 1  # any value above the largest possible cut

    # node ids: 2i = v_in, 2i + 1 = v_out
    cap: dict[tuple[int, int], int] = {}
    graph: list[set[int]] = [set() for _ in range(2 * n)]

    def add_arc(u: int, v: int, c: int) -> None:
        cap[(u, v)] = cap.get((u, v), 0) + c
        cap.setdefault((v, u), 0)
        graph[u].add(v)
        graph[v].add(u)

    for v in nodes:
        i = index[v]
        add_arc(2 * i, 2 * i + 1, inf if v in (a, b) else 1)
    for u in nodes:
        for v in adj[u]:
            if v in removed or u >= v:
                continue
            add_arc(2 * index[u] + 1, 2 * index[v], inf)
            add_arc(2 * index[v] + 1, 2 * index[u], inf)

    source = 2 * index[a] + 1
    sink = 2 * index[b]
    flow = 0
    while True:
        parent: dict[int, int] = {source: source}
        queue = [source]
        while queue and sink not in parent:
            u = queue.pop(0)
            for v in graph[u]:
                if v not in parent and cap.get((u, v), 0) > 0:
                    parent[v] = u
                    queue.append(v)
        if sink not in parent:
            return flow
        # unit augmentation is enough: all interior capacities are 1
        bottleneck = inf
        v = sink
        while v != source:
            u = parent[v]
            bottleneck = min(bottleneck, cap[(u, v)])
            v = u
        v = sink
        while v != source:
            u = parent[v]
            cap[(u, v)] -= bottleneck
            cap[(v, u)] += bottleneck
            v = u
        flow += bottleneck
        if flow >= inf:
            raise NonSeparableError("pair cannot be separated (adjacent)")


def minimal_d_separator(dag: Dag, a: int, b: int) -> set[int]:
    """Minimum-cardinality d-separating set for a non-adjacent pair.

    Computed as a minimum vertex cut of the moralized ancestral graph of
    {a, b}; ties are broken toward the smallest sorted id sequence by greedy
    inclusion tests.
    """
    if dag.adjacent(a, b):
        raise NonSeparableError(f"{a} and {b} are adjacent")
    adj = _moral_ancestral_graph(dag, a, b)
    if b in adj[a]:
        raise NonSeparableError(f"{a} and {b} are adjacent in the moral graph")
    cut_size = _min_vertex_cut_size(adj, set(), a, b)
    chosen: list[int] = []
    for v in sorted(v for v in adj if v not in (a, b)):
        if len(chosen) == cut_size:
            break
        trial = set(chosen) | {v}
        if _min_vertex_cut_size(adj, trial, a, b) == cut_size - len(trial):
            chosen.append(v)
    return set(chosen)


def brute_force_joint(net: BayesNet, max_nodes: int = 20) -> Factor:
    """Exhaustive joint over all variables, scope ascending. Test oracle."""
    if net.n_nodes > max_nodes:
        raise TooLargeError(f"{net.n_nodes} nodes exceeds the {max_nodes}-node cap")
    result = Factor((), np.float64(1.0).reshape(()))
    for cpt in net.cpts:
        result = result.product(_cpt_factor(cpt))
    return result.reorder(tuple(range(net.n_nodes)))
