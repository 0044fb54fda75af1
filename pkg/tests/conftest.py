"""Shared fixtures and independent oracles used across the suite."""

from __future__ import annotations

import numpy as np
import pytest

from locality_lab import pipeline
from locality_lab.graph import BayesNet, Cpt, Dag, assign_cpts, generate_dag
from locality_lab.rng import make_rng


def chain_dag(n: int) -> Dag:
    return Dag(n, frozenset((i, i + 1) for i in range(n - 1)))


def chain_net(probs_root: float, rows: list[tuple[float, float]]) -> BayesNet:
    """Chain 0 -> 1 -> ... with explicit CPT rows (p1 given parent=0, parent=1)."""
    n = len(rows) + 1
    dag = chain_dag(n)
    cpts = [Cpt(0, (), (probs_root,))]
    for i, row in enumerate(rows, start=1):
        cpts.append(Cpt(i, (i - 1,), row))
    return BayesNet(dag, tuple(cpts))


def random_net(seed: int, n_nodes: int = 12, n_edges: int = 18) -> BayesNet:
    rng = make_rng(seed)
    dag = generate_dag(n_nodes, n_edges, rng)
    return assign_cpts(dag, 0.2, 0.2, rng)


def enumeration_conditional(net: BayesNet, target: int, evidence: dict[int, int]) -> float:
    """p(target=1 | evidence) from the full joint, little-endian indexing."""
    from locality_lab.infer import brute_force_joint

    flat = brute_force_joint(net).flat()
    idx = np.arange(flat.size)
    mask = np.ones(flat.size, dtype=bool)
    for var, val in evidence.items():
        mask &= ((idx >> var) & 1) == val
    denom = flat[mask].sum()
    num = flat[mask & (((idx >> target) & 1) == 1)].sum()
    return float(num / denom)


def path_enumeration_d_separated(dag: Dag, a: int, b: int, given: set[int]) -> bool:
    """Independent d-separation oracle: enumerate all simple undirected paths
    and apply the blocking rules directly."""
    descendants = [set() for _ in range(dag.n_nodes)]
    for v in range(dag.n_nodes):
        stack = [v]
        while stack:
            u = stack.pop()
            for c in dag.children[u]:
                if c not in descendants[v]:
                    descendants[v].add(c)
                    stack.append(c)

    def paths(u, visited):
        if u == b:
            yield [u]
            return
        for w in dag.neighbors[u]:
            if w not in visited:
                yield from ([u] + rest for rest in paths(w, visited | {w}))

    for path in paths(a, {a}):
        active = True
        for i in range(1, len(path) - 1):
            prev, mid, nxt = path[i - 1], path[i], path[i + 1]
            is_collider = dag.has_edge(prev, mid) and dag.has_edge(nxt, mid)
            if is_collider:
                if mid not in given and not (descendants[mid] & given):
                    active = False
                    break
            else:
                if mid in given:
                    active = False
                    break
        if active:
            return False
    return True


@pytest.fixture(scope="session")
def desk_selection():
    """Desk-scale selection shared by the expensive end-to-end tests."""
    return pipeline.select_nets_and_pairs(
        10, 10, 5, 2, pipeline.NetParams(20, 20, 0.2, 0.2), seed=100
    )


@pytest.fixture(scope="session")
def local_corpus_100k(desk_selection):
    """One hundred thousand local-mode samples for the first selected net."""
    from locality_lab.obsdist import ObservationSpec, RadiusDistribution

    _, selected = desk_selection
    sel = selected[0]
    spec = ObservationSpec(
        "local", sel.net.dag, RadiusDistribution("geometric", 0.5), 0.2, sel.held_out
    )
    samples = list(pipeline.generate_corpus(sel.net, spec, 100_000, seed=101))
    return sel, spec, samples
