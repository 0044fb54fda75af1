"""Observation distributions: which variables appear together in a sample.

Local and wrong-local modes draw a center and a radius, take the undirected
neighborhood in a locality graph (the data net's own graph, or a decoy), then
apply per-variable dropout. Fully-observed mode starts from all variables and
skips dropout. In every mode, any held-out pair still fully present loses one
member by a fair coin, so held-out pairs never co-occur.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .graph import Dag, undirected_neighborhood

__all__ = [
    "RadiusDistribution",
    "HeldOutPair",
    "ObservationSpec",
    "sample_radius",
    "select_variables",
    "select_with_details",
    "apply_dropout_and_holdout",
    "verify_exclusion",
    "graph_diameter",
]

MODES = ("local", "wrong_local", "fully_observed")


@dataclass(frozen=True)
class RadiusDistribution:
    """Neighborhood-size distribution: geometric(p) on {1,2,...} or a
    Zipfian k^-s truncated to {1..k_max}."""

    kind: str
    parameter: float
    k_max: int | None = None

    def __post_init__(self) -> None:
        if self.kind == "geometric":
            if not (0.0 < self.parameter <= 1.0):
                raise ValueError("geometric parameter must lie in (0, 1]")
        elif self.kind == "zipf":
            if self.parameter <= 1.0:
                raise ValueError("zipf parameter must exceed 1")
            if self.k_max is None or self.k_max < 1:
                raise ValueError("zipf needs a positive truncation point k_max")
        else:
            raise ValueError(f"unknown radius distribution kind: {self.kind}")


@dataclass(frozen=True, order=True)
class HeldOutPair:
    """Unordered non-adjacent variable pair excluded from all training data."""

    a: int
    b: int
    mi: float = 0.0

    def __post_init__(self) -> None:
        if self.a == self.b:
            raise ValueError("held-out pair members must differ")
        if self.a > self.b:
            a, b = self.a, self.b
            object.__setattr__(self, "a", b)
            object.__setattr__(self, "b", a)


@dataclass(frozen=True)
class ObservationSpec:
    """Full description of one observation regime.

    ``locality_graph`` equals the data net's DAG in local mode, a different
    net's DAG in wrong_local mode, and is ignored when fully observed.
    """

    mode: str
    locality_graph: Dag
    radius: RadiusDistribution
    dropout: float
    held_out: tuple[HeldOutPair, ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must lie in [0, 1)")
        object.__setattr__(self, "held_out", tuple(sorted(set(self.held_out))))


def graph_diameter(dag: Dag) -> int:
    """Largest finite undirected BFS distance over all node pairs (>= 1)."""
    best = 1
    for start in range(dag.n_nodes):
        dist = {start: 0}
        frontier = [start]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for u in frontier:
                for v in dag.neighbors[u]:
                    if v not in dist:
                        dist[v] = d
                        nxt.append(v)
            frontier = nxt
        best = max(best, max(dist.values(), default=0))
    return max(best, 1)


def sample_radius(dist: RadiusDistribution, rng: np.random.Generator) -> int:
    """Draw a radius k >= 1 from the configured distribution."""
    if dist.kind == "geometric":
        p = dist.parameter
        if p >= 1.0:
            return 1
        # inverse transform for P(k) = (1-p)^(k-1) p on {1, 2, ...}
        u = 1.0 - rng.random()  # in (0, 1]
        return int(math.ceil(math.log(u) / math.log(1.0 - p)))
    weights = np.arange(1, dist.k_max + 1, dtype=np.float64) ** (-dist.parameter)
    cdf = np.cumsum(weights / weights.sum())
    return int(np.searchsorted(cdf, rng.random(), side="right")) + 1


def apply_dropout_and_holdout(
    members: set[int],
    dropout: float,
    held_out: tuple[HeldOutPair, ...],
    rng: np.random.Generator,
    skip_dropout: bool = False,
) -> set[int]:
    """Dropout pass then held-out enforcement, in deterministic member order.

    Each member is removed independently with probability ``dropout``; then,
    for each held-out pair still fully contained, one member is removed by a
    fair coin. Pairs are visited in sorted order and re-checked after earlier
    removals.
    """
    kept = set(members)
    if not skip_dropout and dropout > 0.0:
        for v in sorted(members):
            if rng.random() < dropout:
                kept.discard(v)
    for pair in sorted(held_out):
        if pair.a in kept and pair.b in kept:
            if rng.random() < 0.5:
                kept.discard(pair.a)
            else:
                kept.discard(pair.b)
    return kept


def select_with_details(
    spec: ObservationSpec, rng: np.random.Generator
) -> tuple[int | None, int | None, set[int]]:
    """As :func:`select_variables`, also reporting the drawn center and radius
    (both None in fully-observed mode)."""
    if spec.mode == "fully_observed":
        members = set(range(spec.locality_graph.n_nodes))
        kept = apply_dropout_and_holdout(members, 0.0, spec.held_out, rng, skip_dropout=True)
        return None, None, kept
    center = int(rng.integers(spec.locality_graph.n_nodes))
    k = sample_radius(spec.radius, rng)
    members = undirected_neighborhood(spec.locality_graph, center, k)
    return center, k, apply_dropout_and_holdout(members, spec.dropout, spec.held_out, rng)


def select_variables(spec: ObservationSpec, rng: np.random.Generator) -> set[int]:
    """Draw the variable subset shown in one sample.

    May return an empty or singleton set at high dropout; callers that need a
    non-degenerate sample are expected to redraw.
    """
    return select_with_details(spec, rng)[2]


def verify_exclusion(
    subsets: Iterable[set[int]], held_out: Iterable[HeldOutPair]
) -> int:
    """Number of subsets containing both members of any held-out pair."""
    pairs = tuple(held_out)
    violations = 0
    for subset in subsets:
        for pair in pairs:
            if pair.a in subset and pair.b in subset:
                violations += 1
                break
    return violations
