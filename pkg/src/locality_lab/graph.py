"""Random Bayes nets over binary variables.

DAGs are built by rejection sampling of random edges (duplicates and
cycle-creating candidates are re-drawn), conditional probability tables are
drawn from a Beta distribution, and joint samples come from ancestral
sampling. Everything is deterministic given the passed-in random stream.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GraphError",
    "InfeasibleEdgeCountError",
    "GenerationStuckError",
    "CycleDetectedError",
    "var_name",
    "parse_var_name",
    "Dag",
    "Cpt",
    "BayesNet",
    "topological_order",
    "generate_dag",
    "sample_beta",
    "assign_cpts",
    "ancestral_sample",
    "undirected_neighborhood",
    "net_to_json",
    "net_from_json",
    "net_content_hash",
]

# Consecutive rejected candidate edges tolerated before giving up; the
# rejection loop has no termination guarantee near edge saturation.
MAX_CONSECUTIVE_REJECTIONS = 10_000

NET_FORMAT_VERSION = "1"


class GraphError(Exception):
    """Base class for graph-construction failures."""


class InfeasibleEdgeCountError(GraphError):
    """Requested more edges than any DAG on the node count can hold."""


class GenerationStuckError(GraphError):
    """Edge rejection sampling exceeded the consecutive-rejection budget."""


class CycleDetectedError(GraphError):
    """A directed cycle was found where a DAG was required."""


def var_name(index: int) -> str:
    """Display name of a variable: the letter X followed by the bare index."""
    if index < 0:
        raise ValueError(f"variable index must be nonnegative, got {index}")
    return f"X{index}"


def parse_var_name(name: str) -> int:
    """Inverse of :func:`var_name`; rejects anything not in canonical form."""
    if len(name) < 2 or name[0] != "X" or not name[1:].isdigit():
        raise ValueError(f"not a variable name: {name!r}")
    if name[1] == "0" and len(name) > 2:
        raise ValueError(f"non-canonical variable name (leading zero): {name!r}")
    return int(name[1:])


@dataclass(frozen=True)
class Dag:
    """Directed acyclic graph on nodes 0..n_nodes-1.

    Adjacency views (``parents``, ``children``, ``neighbors``) are tuples of
    ascending node ids, precomputed on construction. Construction fails on
    self-loops, out-of-range endpoints, or directed cycles.
    """

    n_nodes: int
    edges: frozenset[tuple[int, int]]
    parents: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    children: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be positive")
        pa: list[set[int]] = [set() for _ in range(self.n_nodes)]
        ch: list[set[int]] = [set() for _ in range(self.n_nodes)]
        for u, v in self.edges:
            if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes):
                raise ValueError(f"edge ({u},{v}) out of range")
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            pa[v].add(u)
            ch[u].add(v)
        object.__setattr__(self, "parents", tuple(tuple(sorted(s)) for s in pa))
        object.__setattr__(self, "children", tuple(tuple(sorted(s)) for s in ch))
        object.__setattr__(
            self, "neighbors", tuple(tuple(sorted(pa[i] | ch[i])) for i in range(self.n_nodes))
        )
        _kahn_order(self.n_nodes, self.children)  # raises if cyclic

    def has_edge(self, u: int, v: int) -> bool:
        return (u, v) in self.edges

    def adjacent(self, u: int, v: int) -> bool:
        """True when an edge joins u and v in either direction."""
        return (u, v) in self.edges or (v, u) in self.edges


def _kahn_order(n_nodes: int, children: tuple[tuple[int, ...], ...]) -> list[int]:
    indeg = [0] * n_nodes
    for u in range(n_nodes):
        for v in children[u]:
            indeg[v] += 1
    # Min-heap behavior via sorted frontier keeps the order deterministic.
    import heapq

    frontier = [v for v in range(n_nodes) if indeg[v] == 0]
    heapq.heapify(frontier)
    order: list[int] = []
    while frontier:
        u = heapq.heappop(frontier)
        order.append(u)
        for v in children[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(frontier, v)
    if len(order) != n_nodes:
        raise CycleDetectedError("graph contains a directed cycle")
    return order


def topological_order(dag: Dag) -> list[int]:
    """Topological order of a DAG, lowest-id-first among available nodes."""
    return _kahn_order(dag.n_nodes, dag.children)


def _reaches(children: list[set[int]], src: int, dst: int) -> bool:
    """True when dst is reachable from src along directed edges (DFS)."""
    if src == dst:
        return True
    stack = [src]
    seen = {src}
    while stack:
        u = stack.pop()
        for v in children[u]:
            if v == dst:
                return True
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return False


def generate_dag(n_nodes: int, n_edges: int, rng: np.random.Generator) -> Dag:
    """Random DAG with exactly ``n_edges`` edges by rejection sampling.

    Candidate edges are uniform ordered pairs of vertices; a candidate that is
    a self-loop, duplicates an existing edge, or would create a directed cycle
    is rejected and re-drawn. More than ``MAX_CONSECUTIVE_REJECTIONS``
    rejections in a row aborts with :class:`GenerationStuckError`.
    """
    max_edges = n_nodes * (n_nodes - 1) // 2
    if n_edges > max_edges:
        raise InfeasibleEdgeCountError(
            f"{n_edges} edges requested but a {n_nodes}-node DAG holds at most {max_edges}"
        )
    edges: set[tuple[int, int]] = set()
    children: list[set[int]] = [set() for _ in range(n_nodes)]
    rejections = 0
    while len(edges) < n_edges:
        v1 = int(rng.integers(n_nodes))
        v2 = int(rng.integers(n_nodes))
        if v1 == v2 or (v1, v2) in edges or _reaches(children, v2, v1):
            rejections += 1
            if rejections >= MAX_CONSECUTIVE_REJECTIONS:
                raise GenerationStuckError(
                    f"{rejections} consecutive rejected edges at {len(edges)}/{n_edges}"
                )
            continue
        rejections = 0
        edges.add((v1, v2))
        children[v1].add(v2)
    return Dag(n_nodes, frozenset(edges))


def _standard_normal(rng: np.random.Generator) -> float:
    # Box-Muller on the uniform stream; 1-u keeps the argument in (0, 1].
    u1 = 1.0 - rng.random()
    u2 = rng.random()
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def _sample_gamma(shape: float, rng: np.random.Generator) -> float:
    """Marsaglia-Tsang squeeze sampler; shape < 1 uses the U^(1/shape) boost."""
    if shape < 1.0:
        return _sample_gamma(shape + 1.0, rng) * (1.0 - rng.random()) ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = _standard_normal(rng)
        v = (1.0 + c * x) ** 3
        if v <= 0.0:
            continue
        u = rng.random()
        if u < 1.0 - 0.0331 * x**4:
            return d * v
        if u > 0.0 and math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
            return d * v


def sample_beta(alpha: float, beta: float, rng: np.random.Generator) -> float:
    """Beta(alpha, beta) draw as a ratio of two Marsaglia-Tsang gamma draws."""
    if alpha <= 0.0 or beta <= 0.0:
        raise ValueError("Beta parameters must be positive")
    g1 = _sample_gamma(alpha, rng)
    g2 = _sample_gamma(beta, rng)
    total = g1 + g2
    if total <= 0.0:
        return sample_beta(alpha, beta, rng)
    return g1 / total


@dataclass(frozen=True)
class Cpt:
    """Conditional probability table: P(owner = 1 | parent configuration).

    ``parents`` is ascending by id; entry ``table[c]`` belongs to the parent
    configuration whose code ``c`` packs parent bits little-endian in that
    order (first listed parent is the least significant bit).
    """

    owner: int
    parents: tuple[int, ...]
    table: tuple[float, ...]

    def __post_init__(self) -> None:
        if tuple(sorted(self.parents)) != self.parents:
            raise ValueError("Cpt parents must be in ascending id order")
        if len(self.table) != 2 ** len(self.parents):
            raise ValueError(
                f"Cpt for node {self.owner} needs {2 ** len(self.parents)} entries, "
                f"got {len(self.table)}"
            )
        if any(not (0.0 <= p <= 1.0) for p in self.table):
            raise ValueError(f"Cpt for node {self.owner} has entries outside [0, 1]")

    def config_code(self, values: dict[int, int]) -> int:
        code = 0
        for pos, parent in enumerate(self.parents):
            code |= (values[parent] & 1) << pos
        return code

    def prob_one(self, values: dict[int, int]) -> float:
        return self.table[self.config_code(values)]


@dataclass(frozen=True)
class BayesNet:
    """A DAG plus one CPT per node; defines the data distribution."""

    dag: Dag
    cpts: tuple[Cpt, ...]
    topo_order: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.cpts) != self.dag.n_nodes:
            raise ValueError("need exactly one Cpt per node")
        for v, cpt in enumerate(self.cpts):
            if cpt.owner != v:
                raise ValueError(f"cpts must be indexed by owner; slot {v} holds {cpt.owner}")
            if cpt.parents != self.dag.parents[v]:
                raise ValueError(f"Cpt parents of node {v} do not match the DAG in-edges")
        object.__setattr__(self, "topo_order", tuple(topological_order(self.dag)))

    @property
    def n_nodes(self) -> int:
        return self.dag.n_nodes


def assign_cpts(dag: Dag, alpha: float, beta: float, rng: np.random.Generator) -> BayesNet:
    """Draw every CPT entry independently from Beta(alpha, beta).

    Nodes are visited in topological order and configurations in ascending
    code order, so the draw sequence is reproducible.
    """
    if alpha <= 0.0 or beta <= 0.0:
        raise ValueError("Beta parameters must be positive")
    tables: dict[int, tuple[float, ...]] = {}
    for v in topological_order(dag):
        k = len(dag.parents[v])
        tables[v] = tuple(sample_beta(alpha, beta, rng) for _ in range(2**k))
    cpts = tuple(Cpt(v, dag.parents[v], tables[v]) for v in range(dag.n_nodes))
    return BayesNet(dag, cpts)


def ancestral_sample(
    net: BayesNet, rng: np.random.Generator, only: set[int] | None = None
) -> dict[int, int]:
    """Sample variables in topological order, each from its CPT row.

    With ``only`` given, sampling is restricted to the ancestral closure of
    that set; the restriction leaves the joint law of the returned variables
    unchanged because non-ancestors cannot influence them.
    """
    needed: set[int] | None = None
    if only is not None:
        needed = set(only)
        stack = list(only)
        while stack:
            v = stack.pop()
            for p in net.dag.parents[v]:
                if p not in needed:
                    needed.add(p)
                    stack.append(p)
    values: dict[int, int] = {}
    for v in net.topo_order:
        if needed is not None and v not in needed:
            continue
        p1 = net.cpts[v].prob_one(values)
        values[v] = 1 if rng.random() < p1 else 0
    if only is not None:
        return {v: values[v] for v in only}
    return values


def undirected_neighborhood(dag: Dag, center: int, k: int) -> set[int]:
    """All nodes within undirected BFS distance k of center, center included."""
    if k < 0:
        raise ValueError("radius must be nonnegative")
    if not (0 <= center < dag.n_nodes):
        raise ValueError(f"center {center} out of range")
    seen = {center}
    frontier = [center]
    for _ in range(k):
        nxt: list[int] = []
        for u in frontier:
            for v in dag.neighbors[u]:
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        if not nxt:
            break
        frontier = nxt
    return seen


# --- serialization ---------------------------------------------------------
#
# Probabilities are printed with %.17g so the decimal form always carries
# enough digits to restore the exact double.


def _fmt_prob(p: float) -> str:
    return "%.17g" % float(p)


def net_to_json(net: BayesNet) -> str:
    edges = sorted(net.dag.edges)
    lines = [
        "{",
        f'  "version": "{NET_FORMAT_VERSION}",',
        f'  "n_nodes": {net.dag.n_nodes},',
        '  "edges": [' + ", ".join(f"[{u}, {v}]" for u, v in edges) + "],",
        '  "cpts": {',
    ]
    rows = []
    for v in range(net.dag.n_nodes):
        cpt = net.cpts[v]
        parents = ", ".join(f'"{var_name(p)}"' for p in cpt.parents)
        table = ", ".join(_fmt_prob(p) for p in cpt.table)
        rows.append(f'    "{var_name(v)}": {{"parents": [{parents}], "table": [{table}]}}')
    lines.append(",\n".join(rows))
    lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


def net_from_json(text: str) -> BayesNet:
    doc = json.loads(text)
    if str(doc.get("version")) != NET_FORMAT_VERSION:
        raise ValueError(f"unsupported net format version: {doc.get('version')!r}")
    n_nodes = int(doc["n_nodes"])
    edges = frozenset((int(u), int(v)) for u, v in doc["edges"])
    dag = Dag(n_nodes, edges)
    cpts = []
    for v in range(n_nodes):
        entry = doc["cpts"][var_name(v)]
        parents = tuple(parse_var_name(p) for p in entry["parents"])
        cpts.append(Cpt(v, parents, tuple(float(x) for x in entry["table"])))
    return BayesNet(dag, tuple(cpts))


def net_content_hash(text: str | bytes) -> str:
    """SHA-256 of the serialized net, used as the manifest's net_ref."""
    data = text.encode() if isinstance(text, str) else text
    return hashlib.sha256(data).hexdigest()
