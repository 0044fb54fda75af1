"""Conditional-probability estimators over any sequence model.

Direct prediction reads the model's conditional straight off. Scaffolded
generation walks a precomputed d-separating set of intermediate variables,
sampling each value before reading the target probability, and averages over
Monte Carlo repetitions. Negative scaffolds are size-matched irrelevant
controls, and free generation lets the model pick its own intermediates until
it proposes the target.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .graph import Dag
from .infer import d_separated, minimal_d_separator
from .model import PromptState, SequenceModel

__all__ = [
    "EstimatorError",
    "AdjacentPairError",
    "InsufficientVariablesError",
    "EstimationFailedError",
    "Query",
    "ScaffoldPlan",
    "Trace",
    "EstimateResult",
    "direct",
    "build_scaffold",
    "scaffolded",
    "scaffolded_exact_expectation",
    "negative_scaffold",
    "free_generation",
    "plan_cooccurrence_warnings",
]

log = logging.getLogger(__name__)

DEFAULT_MC_SAMPLES = 10


class EstimatorError(Exception):
    pass


class AdjacentPairError(EstimatorError):
    """The pair is adjacent; no scaffold exists or is needed."""


class InsufficientVariablesError(EstimatorError):
    """Not enough variables remain to build a negative scaffold."""


class EstimationFailedError(EstimatorError):
    """Every Monte Carlo repetition was discarded."""


@dataclass(frozen=True)
class Query:
    """Estimate p(target = target_value | observed = observed_value)."""

    observed: int
    observed_value: int
    target: int
    target_value: int = 1

    def __post_init__(self) -> None:
        if self.observed == self.target:
            raise ValueError("observed and target variables must differ")


@dataclass(frozen=True)
class ScaffoldPlan:
    """Ordered intermediate variables, nearest to the observed variable first."""

    variables: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.variables)


@dataclass(frozen=True)
class Trace:
    """Variables generated before the target plus the terminal probability."""

    steps: tuple[tuple[int, int], ...]
    terminal_p1: float

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def variables(self) -> set[int]:
        return {v for v, _ in self.steps}


@dataclass(frozen=True)
class EstimateResult:
    estimate: float
    traces: tuple[Trace, ...]
    overflowed: int = 0


def direct(model: SequenceModel, query: Query) -> float:
    """The model's conditional with only the observed variable in context."""
    state = PromptState(query.target, ((query.observed, query.observed_value),))
    dist = model.value_distribution(state, query.target)
    return dist.prob(query.target_value)


def _bfs_distances(dag: Dag, start: int) -> dict[int, int]:
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
    return dist


def _shortest_path(dag: Dag, start: int, goal: int) -> list[int]:
    """Deterministic undirected BFS path (lowest-id expansion); [] if none."""
    if start == goal:
        return [start]
    parent = {start: start}
    frontier = [start]
    while frontier:
        nxt = []
        for u in frontier:
            for v in dag.neighbors[u]:
                if v not in parent:
                    parent[v] = u
                    if v == goal:
                        path = [v]
                        while path[-1] != start:
                            path.append(parent[path[-1]])
                        return path[::-1]
                    nxt.append(v)
        frontier = nxt
    return []


def build_scaffold(dag: Dag, query: Query) -> ScaffoldPlan:
    """d-separating relay of intermediates, nearest the observed variable first.

    Starts from the minimum-cardinality d-separating set, then completes it
    into a relay by walking a shortest path from the cut member nearest the
    target up to the target, keeping every interior vertex that preserves
    d-separation. On a directed chain this yields exactly the run of
    variables between observed and target; ties in the distance ordering
    break toward the smaller id.
    """
    if dag.adjacent(query.observed, query.target):
        raise AdjacentPairError(
            f"{query.observed} and {query.target} are adjacent; no scaffold applies"
        )
    separator = set(minimal_d_separator(dag, query.observed, query.target))
    if separator:
        dist_t = _bfs_distances(dag, query.target)
        anchor = min(separator, key=lambda v: (dist_t.get(v, dag.n_nodes + 1), v))
        for v in _shortest_path(dag, anchor, query.target)[1:-1]:
            if v in separator or v == query.observed:
                continue
            if d_separated(dag, query.observed, query.target, separator | {v}):
                separator.add(v)
    distances = _bfs_distances(dag, query.observed)
    ordered = sorted(separator, key=lambda v: (distances.get(v, dag.n_nodes + 1), v))
    return ScaffoldPlan(tuple(ordered))


def _sample_bit(p1: float, rng: np.random.Generator) -> int:
    return 1 if rng.random() < p1 else 0


def scaffolded(
    model: SequenceModel,
    query: Query,
    plan: ScaffoldPlan,
    m_samples: int = DEFAULT_MC_SAMPLES,
    rng: np.random.Generator | None = None,
) -> EstimateResult:
    """Monte Carlo marginalization over the scaffold variables' values.

    Each repetition seeds the context with the observed assignment, samples a
    bit for every scaffold variable in order from the model, then reads the
    target probability; the estimate is the mean over repetitions. An empty
    plan reduces to direct prediction.
    """
    if m_samples < 1:
        raise ValueError("m_samples must be at least 1")
    if rng is None and plan.variables:
        raise ValueError("a random stream is required for a non-empty plan")
    estimates = []
    traces = []
    for _ in range(m_samples):
        state = PromptState(query.target, ((query.observed, query.observed_value),))
        steps: list[tuple[int, int]] = []
        for var in plan.variables:
            p1 = model.value_distribution(state, var).p1
            bit = _sample_bit(p1, rng)
            steps.append((var, bit))
            state = state.extended(var, bit)
        p1 = model.value_distribution(state, query.target).p1
        estimates.append(p1 if query.target_value == 1 else 1.0 - p1)
        traces.append(Trace(tuple(steps), p1))
    return EstimateResult(float(np.mean(estimates)), tuple(traces))


def scaffolded_exact_expectation(
    model: SequenceModel, query: Query, plan: ScaffoldPlan
) -> float:
    """Exact expectation of the scaffolded estimator by enumerating all
    scaffold bit combinations. Exponential in the plan length; test use."""
    total = 0.0
    for bits in itertools.product((0, 1), repeat=len(plan.variables)):
        state = PromptState(query.target, ((query.observed, query.observed_value),))
        weight = 1.0
        for var, bit in zip(plan.variables, bits):
            p1 = model.value_distribution(state, var).p1
            weight *= p1 if bit == 1 else 1.0 - p1
            state = state.extended(var, bit)
        p1 = model.value_distribution(state, query.target).p1
        total += weight * (p1 if query.target_value == 1 else 1.0 - p1)
    return total


def negative_scaffold(
    dag: Dag, plan: ScaffoldPlan, query: Query, rng: np.random.Generator
) -> ScaffoldPlan:
    """Uniform same-size set avoiding the plan and both query variables,
    returned in ascending id order."""
    excluded = set(plan.variables) | {query.observed, query.target}
    eligible = [v for v in range(dag.n_nodes) if v not in excluded]
    if len(eligible) < len(plan.variables):
        raise InsufficientVariablesError(
            f"need {len(plan.variables)} variables but only {len(eligible)} are eligible"
        )
    if not plan.variables:
        return ScaffoldPlan(())
    picked = rng.choice(len(eligible), size=len(plan.variables), replace=False)
    return ScaffoldPlan(tuple(sorted(eligible[int(i)] for i in picked)))


def _sample_from_probs(probs: dict[int, float], rng: np.random.Generator) -> int:
    u = rng.random()
    acc = 0.0
    items = sorted(probs.items())
    for var, p in items:
        acc += p
        if u < acc:
            return var
    return items[-1][0]


def free_generation(
    model: SequenceModel,
    query: Query,
    m_samples: int = DEFAULT_MC_SAMPLES,
    max_steps: int | None = None,
    rng: np.random.Generator | None = None,
) -> EstimateResult:
    """Let the model pick intermediate variables until it proposes the target.

    A repetition that exceeds ``max_steps`` intermediate variables is
    discarded and counted in ``overflowed``; if every repetition overflows the
    estimation fails. ``max_steps`` defaults to twice the number of variables
    the model knows about.
    """
    if m_samples < 1:
        raise ValueError("m_samples must be at least 1")
    if rng is None:
        raise ValueError("free generation requires a random stream")
    if max_steps is None:
        known = getattr(model, "known_variables", None)
        if known is None:
            raise ValueError("max_steps must be given for models without a variable list")
        max_steps = 2 * max(len(known()), 1)
    estimates = []
    traces = []
    overflowed = 0
    for _ in range(m_samples):
        state = PromptState(query.target, ((query.observed, query.observed_value),))
        steps: list[tuple[int, int]] = []
        while True:
            if len(steps) > max_steps:
                overflowed += 1
                break
            nxt = _sample_from_probs(model.next_variable_distribution(state).probs, rng)
            if nxt == query.target:
                p1 = model.value_distribution(state, query.target).p1
                estimates.append(p1 if query.target_value == 1 else 1.0 - p1)
                traces.append(Trace(tuple(steps), p1))
                break
            p1 = model.value_distribution(state, nxt).p1
            bit = _sample_bit(p1, rng)
            steps.append((nxt, bit))
            state = state.extended(nxt, bit)
    if not estimates:
        raise EstimationFailedError(f"all {m_samples} repetitions exceeded {max_steps} steps")
    if overflowed:
        log.warning("free generation discarded %d/%d overflowing traces", overflowed, m_samples)
    return EstimateResult(float(np.mean(estimates)), tuple(traces), overflowed=overflowed)


def plan_cooccurrence_warnings(
    plan: ScaffoldPlan,
    query: Query,
    pair_seen: "dict[tuple[int, int], int] | None",
) -> list[str]:
    """Plan-quality check: each scaffold member should have been observed with
    its predecessor or with one of the query variables. Returns warning
    strings; an empty list means the plan is fully grounded in the corpus."""
    if pair_seen is None:
        return []

    def seen(a: int, b: int) -> bool:
        entry = pair_seen.get((min(a, b), max(a, b)))
        if isinstance(entry, dict):
            return sum(entry.values()) > 0
        return bool(entry)

    warnings = []
    prev = query.observed
    for var in plan.variables:
        anchors = (prev, query.observed, query.target)
        if not any(seen(var, u) for u in anchors):
            warnings.append(
                f"scaffold variable {var} never co-occurs with its predecessor "
                f"{prev} or the query pair"
            )
        prev = var
    return warnings
