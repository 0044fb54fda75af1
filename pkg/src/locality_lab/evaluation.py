"""Evaluation harness: held-out query batteries, MSE against true and
marginal probabilities, trace d-separation rates, learning curves, and
Monte-Carlo-sample sweeps.

Each held-out pair expands to four queries (both directions, both evidence
values, always estimating probability-of-one; the squared error for the other
target value is identical by complementarity). Summaries report mean squared
error with nonparametric bootstrap confidence intervals.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np

from .estimators import (
    EstimatorError,
    Query,
    build_scaffold,
    direct,
    free_generation,
    negative_scaffold,
    plan_cooccurrence_warnings,
    scaffolded,
)
from .graph import BayesNet, var_name
from .infer import ZeroProbabilityEvidenceError, conditional, d_separated, marginal
from .model import SequenceModel, UnknownVariableError, UnsupportedOperationError
from .obsdist import HeldOutPair
from .rng import make_rng

__all__ = [
    "ESTIMATOR_NAMES",
    "EstimateRecord",
    "SkippedQuery",
    "SummaryRow",
    "queries_for_pair",
    "evaluate",
    "d_separation_rate",
    "summarize",
    "bootstrap_ci",
    "records_to_csv",
    "learning_curve",
    "sample_count_sweep",
]

log = logging.getLogger(__name__)

ESTIMATOR_NAMES = ("direct", "scaffolded", "negative_scaffolded", "free")

BOOTSTRAP_RESAMPLES = 10_000

CSV_HEADER = [
    "net_id",
    "estimator",
    "observed",
    "observed_value",
    "target",
    "target_value",
    "estimate",
    "true_conditional",
    "marginal",
    "squared_error_true",
    "squared_error_marginal",
    "trace_length",
    "trace_d_separates",
    "m_samples",
    "corpus_tokens_seen",
]


@dataclass(frozen=True)
class EstimateRecord:
    net_id: str
    estimator: str
    query: Query
    estimate: float
    true_conditional: float
    marginal: float
    squared_error_true: float
    squared_error_marginal: float
    trace_length: float | None
    trace_d_separates: bool | None
    m_samples: int
    corpus_tokens_seen: int | None

    def csv_row(self) -> list:
        return [
            self.net_id,
            self.estimator,
            var_name(self.query.observed),
            self.query.observed_value,
            var_name(self.query.target),
            self.query.target_value,
            repr(self.estimate),
            repr(self.true_conditional),
            repr(self.marginal),
            repr(self.squared_error_true),
            repr(self.squared_error_marginal),
            "" if self.trace_length is None else repr(self.trace_length),
            "" if self.trace_d_separates is None else int(self.trace_d_separates),
            self.m_samples,
            "" if self.corpus_tokens_seen is None else self.corpus_tokens_seen,
        ]


@dataclass(frozen=True)
class SkippedQuery:
    query: Query
    estimator: str
    reason: str


@dataclass(frozen=True)
class SummaryRow:
    estimator: str
    n: int
    mse_true: float
    mse_true_ci: tuple[float, float]
    mse_marginal: float
    mse_marginal_ci: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "n": self.n,
            "mse_true": self.mse_true,
            "mse_true_ci": list(self.mse_true_ci),
            "mse_marginal": self.mse_marginal,
            "mse_marginal_ci": list(self.mse_marginal_ci),
        }


def queries_for_pair(pair: HeldOutPair) -> list[Query]:
    """Both directions and both evidence values, target value fixed to one."""
    return [
        Query(observed=pair.b, observed_value=0, target=pair.a),
        Query(observed=pair.b, observed_value=1, target=pair.a),
        Query(observed=pair.a, observed_value=0, target=pair.b),
        Query(observed=pair.a, observed_value=1, target=pair.b),
    ]


def _run_estimator(
    name: str,
    model: SequenceModel,
    net: BayesNet,
    query: Query,
    m_samples: int,
    max_steps: int | None,
    rng,
    pair_seen,
):
    """Returns (estimate, mean trace length, all-d-separate flag, trace sets)."""
    if name == "direct":
        return direct(model, query), None, None, []
    if name == "scaffolded":
        plan = build_scaffold(net.dag, query)
        for warning in plan_cooccurrence_warnings(plan, query, pair_seen):
            log.warning("%s", warning)
        result = scaffolded(model, query, plan, m_samples, rng)
    elif name == "negative_scaffolded":
        plan = build_scaffold(net.dag, query)
        neg = negative_scaffold(net.dag, plan, query, rng)
        result = scaffolded(model, query, neg, m_samples, rng)
    elif name == "free":
        steps = max_steps if max_steps is not None else 2 * net.n_nodes
        result = free_generation(model, query, m_samples, steps, rng)
    else:
        raise ValueError(f"unknown estimator: {name}")
    lengths = [len(t) for t in result.traces]
    trace_sets = [t.variables for t in result.traces]
    seps = [
        d_separated(net.dag, query.observed, query.target, s - {query.observed})
        for s in trace_sets
    ]
    return result.estimate, float(np.mean(lengths)), all(seps), trace_sets


def evaluate(
    model: SequenceModel,
    net: BayesNet,
    pairs: list[HeldOutPair],
    estimators: tuple[str, ...] = ESTIMATOR_NAMES,
    m_samples: int = 10,
    seed: int = 0,
    max_steps: int | None = None,
    net_id: str = "net",
    corpus_tokens_seen: int | None = None,
    collect_traces: bool = False,
):
    """Run every estimator on every query of every pair.

    Zero-probability-evidence queries are skipped with a reason, as are
    estimator errors; the run always continues. Per-query substreams keyed by
    (query index, estimator index) make results independent of scheduling.
    Returns (records, skipped[, traces]) where ``traces`` pairs each recorded
    free/scaffolded trace with its query when ``collect_traces`` is set.
    """
    records: list[EstimateRecord] = []
    skipped: list[SkippedQuery] = []
    traces: list[tuple[Query, set[int]]] = []
    pair_seen = getattr(model, "pair_counts", None)
    queries = [q for pair in pairs for q in queries_for_pair(pair)]
    for qi, query in enumerate(queries):
        p_evidence = conditional(
            net, query.observed, query.observed_value, {}
        )
        if p_evidence <= 1e-12:
            skipped.extend(
                SkippedQuery(query, name, "zero_probability_evidence") for name in estimators
            )
            continue
        try:
            truth = conditional(net, query.target, query.target_value,
                                {query.observed: query.observed_value})
        except ZeroProbabilityEvidenceError:
            skipped.extend(
                SkippedQuery(query, name, "zero_probability_evidence") for name in estimators
            )
            continue
        marg = marginal(net, query.target)
        if query.target_value == 0:
            marg = 1.0 - marg
        for ei, name in enumerate(estimators):
            rng = make_rng(seed, 3, qi, ei)
            try:
                estimate, trace_len, trace_dsep, trace_sets = _run_estimator(
                    name, model, net, query, m_samples, max_steps, rng, pair_seen
                )
            except (EstimatorError, UnsupportedOperationError, UnknownVariableError) as exc:
                skipped.append(SkippedQuery(query, name, f"estimator-error: {exc}"))
                continue
            if collect_traces and name == "free":
                traces.extend((query, s) for s in trace_sets)
            records.append(
                EstimateRecord(
                    net_id=net_id,
                    estimator=name,
                    query=query,
                    estimate=estimate,
                    true_conditional=truth,
                    marginal=marg,
                    squared_error_true=(estimate - truth) ** 2,
                    squared_error_marginal=(estimate - marg) ** 2,
                    trace_length=trace_len,
                    trace_d_separates=trace_dsep,
                    m_samples=m_samples,
                    corpus_tokens_seen=corpus_tokens_seen,
                )
            )
    if collect_traces:
        return records, skipped, traces
    return records, skipped


def d_separation_rate(
    traces: list[tuple[Query, set[int]]], dag
) -> float:
    """Fraction of traces whose variable set d-separates observed from target."""
    if not traces:
        return math.nan
    hits = 0
    for query, variables in traces:
        given = set(variables) - {query.observed, query.target}
        if d_separated(dag, query.observed, query.target, given):
            hits += 1
    return hits / len(traces)


def bootstrap_ci(
    values: np.ndarray, seed: int, resamples: int = BOOTSTRAP_RESAMPLES
) -> tuple[float, float]:
    """Percentile bootstrap 95% interval for the mean, fixed-seed reproducible."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return (math.nan, math.nan)
    if values.size == 1:
        return (float(values[0]), float(values[0]))
    rng = make_rng(seed, 4)
    idx = rng.integers(0, values.size, size=(resamples, values.size))
    means = values[idx].mean(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    return (float(lo), float(hi))


def summarize(records: list[EstimateRecord], seed: int = 0) -> list[SummaryRow]:
    """Mean squared errors per estimator with 95% bootstrap intervals."""
    rows = []
    names = sorted({r.estimator for r in records})
    for name in names:
        sub = [r for r in records if r.estimator == name]
        err_true = np.array([r.squared_error_true for r in sub])
        err_marg = np.array([r.squared_error_marginal for r in sub])
        rows.append(
            SummaryRow(
                estimator=name,
                n=len(sub),
                mse_true=float(err_true.mean()),
                mse_true_ci=bootstrap_ci(err_true, seed),
                mse_marginal=float(err_marg.mean()),
                mse_marginal_ci=bootstrap_ci(err_marg, seed),
            )
        )
    return rows


def records_to_csv(records: list[EstimateRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for record in records:
        writer.writerow(record.csv_row())
    return buf.getvalue()


def learning_curve(
    samples,
    budgets: list[int],
    net: BayesNet,
    pairs: list[HeldOutPair],
    estimators: tuple[str, ...] = ("direct", "scaffolded", "free"),
    m_samples: int = 10,
    seed: int = 0,
    smoothing: float = 1.0,
    backoff_threshold: int = 50,
    net_id: str = "net",
):
    """Refit the empirical model on corpus prefixes of increasing character
    budget and evaluate each; returns [(budget, records, summary)]."""
    from .model import fit_empirical
    from .pipeline import serialize_sample

    if list(budgets) != sorted(budgets):
        raise ValueError("budgets must be ascending")
    samples = list(samples)
    out = []
    for budget in budgets:
        prefix = []
        consumed = 0
        for sample in samples:
            consumed += len(serialize_sample(sample))
            if consumed > budget:
                break
            prefix.append(sample)
        model = fit_empirical(prefix, smoothing, backoff_threshold)
        records, _ = evaluate(
            model,
            net,
            pairs,
            estimators,
            m_samples,
            seed=seed,
            net_id=net_id,
            corpus_tokens_seen=model.tokens_seen,
        )
        out.append((budget, records, summarize(records, seed=seed)))
    return out


def sample_count_sweep(
    model: SequenceModel,
    net: BayesNet,
    pairs: list[HeldOutPair],
    m_values: list[int],
    estimators: tuple[str, ...] = ("scaffolded", "negative_scaffolded", "free"),
    seed: int = 0,
    net_id: str = "net",
):
    """MSE per Monte Carlo sample count, with direct prediction as the
    M-invariant baseline; returns [(m, summary_rows)]."""
    if any(m < 1 for m in m_values):
        raise ValueError("sample counts must be at least 1")
    out = []
    for m in m_values:
        records, _ = evaluate(
            model, net, pairs, tuple(estimators) + ("direct",), m, seed=seed, net_id=net_id
        )
        out.append((m, summarize(records, seed=seed)))
    return out
