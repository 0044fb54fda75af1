"""Closed-form analysis of step-by-step estimation on directed chains.

For a chain data distribution observed only through adjacent pairs, the
cross-entropy risk minimizer has a closed form. Two published formulations
are implemented side by side:

* ``marginal_mixture`` — adjacent conditionals are the even blend of the true
  conditional and the marginal of the predicted variable; non-adjacent
  conditionals collapse to the marginal.
* ``uniform_mixture`` — the risk carries a uniform-regularization term, so
  adjacent conditionals blend the true conditional with the uniform
  distribution (context-weighted), and non-adjacent conditionals collapse to
  uniform. Its bias guarantee assumes doubly stochastic transitions and a
  uniform initial distribution.

From either minimizer, the exact expectation of the scaffolded Monte Carlo
estimator is a product of the blended transition matrices, which makes the
bias comparison against direct prediction (the "reasoning gap") checkable to
machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import _sample_gamma

__all__ = [
    "TheoryError",
    "SinkhornError",
    "AssumptionViolatedError",
    "LogOfZeroError",
    "FORMULATIONS",
    "ChainModel",
    "RiskMinimizer",
    "GapRow",
    "GapReport",
    "KlRow",
    "random_chain",
    "chain_marginal",
    "chain_conditional",
    "chain_brute_force_conditional",
    "mixture_minimizer",
    "risk_minimizer",
    "risk",
    "scaffolded_expectation",
    "scaffolded_expectation_brute_force",
    "gap_check",
    "kl_gap_check",
]

FORMULATIONS = ("marginal_mixture", "uniform_mixture")

_ROW_TOL = 1e-12
_SINKHORN_MAX_ITERS = 10_000
_VACUOUS_BIAS = 1e-9


class TheoryError(Exception):
    pass


class SinkhornError(TheoryError):
    """Sinkhorn normalization failed to converge."""


class AssumptionViolatedError(TheoryError):
    """The chain does not meet the formulation's assumptions."""


class LogOfZeroError(TheoryError):
    """The evaluated model assigns zero mass where the risk puts weight."""


@dataclass(frozen=True)
class ChainModel:
    """First-order chain over n variables with a common finite alphabet.

    ``transitions[m]`` is the row-stochastic matrix from variable m to m+1
    (0-based); ``initial`` is the distribution of variable 0.
    """

    initial: np.ndarray
    transitions: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        initial = np.asarray(self.initial, dtype=np.float64)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(
            self, "transitions", tuple(np.asarray(t, dtype=np.float64) for t in self.transitions)
        )
        k = initial.shape[0]
        if initial.ndim != 1 or k < 2:
            raise ValueError("initial must be a distribution over at least two outcomes")
        if np.any(initial < 0) or abs(initial.sum() - 1.0) > _ROW_TOL:
            raise ValueError("initial distribution must normalize")
        if not self.transitions:
            raise ValueError("a chain needs at least one transition")
        for t in self.transitions:
            if t.shape != (k, k):
                raise ValueError("transition shape mismatch")
            if np.any(t < 0) or np.max(np.abs(t.sum(axis=1) - 1.0)) > _ROW_TOL:
                raise ValueError("transition rows must normalize")

    @property
    def n(self) -> int:
        return len(self.transitions) + 1

    @property
    def arity(self) -> int:
        return self.initial.shape[0]


def _dirichlet_row(k: int, rng, concentration: float) -> np.ndarray:
    draws = np.array([_sample_gamma(concentration, rng) for _ in range(k)])
    total = draws.sum()
    if total <= 0.0:
        return _dirichlet_row(k, rng, concentration)
    return draws / total


def _sinkhorn(matrix: np.ndarray) -> np.ndarray:
    m = matrix.copy()
    for _ in range(_SINKHORN_MAX_ITERS):
        rows = m.sum(axis=1, keepdims=True)
        if np.any(rows <= 0.0):
            raise SinkhornError("matrix has a zero row")
        m = m / rows
        cols = m.sum(axis=0, keepdims=True)
        if np.any(cols <= 0.0):
            raise SinkhornError("matrix has a zero column")
        m = m / cols
        if (
            np.max(np.abs(m.sum(axis=1) - 1.0)) <= _ROW_TOL
            and np.max(np.abs(m.sum(axis=0) - 1.0)) <= _ROW_TOL
        ):
            return m
    raise SinkhornError(f"no convergence within {_SINKHORN_MAX_ITERS} iterations")


def random_chain(
    n: int,
    arity: int,
    rng,
    doubly_stochastic: bool = False,
    concentration: float = 1.0,
) -> ChainModel:
    """Random chain with Dirichlet transition rows.

    With ``doubly_stochastic`` set, every transition matrix is Sinkhorn
    normalized until rows and columns both sum to one, and the initial
    distribution is uniform (which doubly stochastic transitions preserve).
    """
    if n < 3:
        raise ValueError("a chain needs at least three variables")
    if arity < 2:
        raise ValueError("arity must be at least 2")
    transitions = []
    for _ in range(n - 1):
        rows = np.stack([_dirichlet_row(arity, rng, concentration) for _ in range(arity)])
        if doubly_stochastic:
            rows = _sinkhorn(rows)
        transitions.append(rows)
    if doubly_stochastic:
        initial = np.full(arity, 1.0 / arity)
    else:
        initial = _dirichlet_row(arity, rng, concentration)
    return ChainModel(initial, tuple(transitions))


def chain_marginal(chain: ChainModel, i: int) -> np.ndarray:
    """Exact marginal distribution of variable i (0-based)."""
    if not (0 <= i < chain.n):
        raise ValueError(f"index {i} out of range")
    v = chain.initial.copy()
    for m in range(i):
        v = v @ chain.transitions[m]
    return v


def chain_conditional(chain: ChainModel, i: int, j: int, y_j: int) -> np.ndarray:
    """Exact distribution of variable i given variable j = y_j, for i > j."""
    if not (0 <= j < i < chain.n):
        raise ValueError("need 0 <= j < i < n")
    v = np.zeros(chain.arity)
    v[y_j] = 1.0
    for m in range(j, i):
        v = v @ chain.transitions[m]
    return v


def chain_brute_force_conditional(chain: ChainModel, i: int, j: int, y_j: int) -> np.ndarray:
    """Conditional by full joint enumeration; oracle for chain_conditional."""
    k, n = chain.arity, chain.n
    out = np.zeros(k)
    total = 0.0
    for flat in range(k**n):
        values = []
        rem = flat
        for _ in range(n):
            values.append(rem % k)
            rem //= k
        p = chain.initial[values[0]]
        for m in range(n - 1):
            p *= chain.transitions[m][values[m], values[m + 1]]
        if values[j] == y_j:
            total += p
            out[values[i]] += p
    if total <= 0.0:
        raise ValueError("conditioning event has probability zero")
    return out / total


def mixture_minimizer(
    p1: np.ndarray, p2: np.ndarray, alpha1: float, alpha2: float
) -> np.ndarray:
    """Minimizer of alpha1*H(p1, q) + alpha2*H(p2, q): the weighted blend."""
    if alpha1 < 0 or alpha2 < 0 or alpha1 + alpha2 <= 0:
        raise ValueError("weights must be nonnegative and not both zero")
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    return (alpha1 * p1 + alpha2 * p2) / (alpha1 + alpha2)


@dataclass(frozen=True)
class RiskMinimizer:
    """Closed-form risk minimizer for one formulation on one chain.

    ``q_matrices[m]`` holds the blended adjacent conditionals for edge
    m -> m+1; ``lambdas[m, v]`` is the weight placed on the base distribution
    (marginal or uniform) in that row. Non-adjacent contexts fall back to the
    base rule entirely.
    """

    formulation: str
    q_matrices: tuple[np.ndarray, ...]
    lambdas: np.ndarray
    marginals: tuple[np.ndarray, ...]
    uniform_weight: float = 1.0

    @property
    def arity(self) -> int:
        return self.marginals[0].shape[0]

    @property
    def n(self) -> int:
        return len(self.marginals)

    def base_distribution(self, i: int) -> np.ndarray:
        if self.formulation == "marginal_mixture":
            return self.marginals[i]
        return np.full(self.arity, 1.0 / self.arity)

    def row(self, j: int, i: int, v: int) -> np.ndarray:
        """q(Y_i | Y_j = v) for any ordered context."""
        if i == j + 1:
            return self.q_matrices[j][v]
        return self.base_distribution(i)


def risk_minimizer(
    chain: ChainModel, formulation: str, uniform_weight: float = 1.0
) -> RiskMinimizer:
    """Construct the closed-form minimizer for the requested formulation.

    marginal_mixture blends each adjacent conditional evenly with the
    marginal. uniform_mixture blends with the uniform distribution, weighting
    by the context masses: the pair observation weight times the conditioning
    value's marginal against ``uniform_weight`` spread over all
    identifier-value-identifier contexts.
    """
    if formulation not in FORMULATIONS:
        raise ValueError(f"formulation must be one of {FORMULATIONS}")
    n, k = chain.n, chain.arity
    marginals = tuple(chain_marginal(chain, i) for i in range(n))
    uniform = np.full(k, 1.0 / k)
    q_matrices = []
    lambdas = np.zeros((n - 1, k))
    for m in range(n - 1):
        rows = np.zeros((k, k))
        for v in range(k):
            cond = chain.transitions[m][v]
            if formulation == "marginal_mixture":
                lam = 0.5
                rows[v] = mixture_minimizer(marginals[m + 1], cond, lam, 1.0 - lam)
            else:
                u_w = uniform_weight / (n * n * k)
                p_w = (1.0 / (n - 1)) * marginals[m][v]
                lam = u_w / (u_w + p_w) if (u_w + p_w) > 0 else 1.0
                rows[v] = mixture_minimizer(uniform, cond, lam, 1.0 - lam)
            lambdas[m, v] = lam
        q_matrices.append(rows)
    return RiskMinimizer(
        formulation=formulation,
        q_matrices=tuple(q_matrices),
        lambdas=lambdas,
        marginals=marginals,
        uniform_weight=uniform_weight,
    )


def _cross_entropy(p: np.ndarray, q: np.ndarray) -> float:
    h = 0.0
    for pi, qi in zip(p, q):
        if pi > 0.0:
            if qi <= 0.0:
                raise LogOfZeroError("q assigns zero mass where the target has mass")
            h -= pi * math.log(qi)
    return h


def risk(chain: ChainModel, q: RiskMinimizer, uniform_weight: float | None = None) -> float:
    """Exact risk of ``q`` under the pair observation distribution.

    Sums weighted cross-entropy terms over every ordered conditioning context
    (source variable, conditioning value, predicted variable). The weight
    layout matches the formulation that ``q`` was built for, so
    ``risk(chain, risk_minimizer(chain, f, w))`` is the attainable minimum.
    """
    if uniform_weight is None:
        uniform_weight = q.uniform_weight
    n, k = chain.n, chain.arity
    marginals = [chain_marginal(chain, i) for i in range(n)]
    uniform = np.full(k, 1.0 / k)
    total = 0.0
    if q.formulation == "uniform_mixture":
        u_w = uniform_weight / (n * n * k)
        for j in range(n):
            for i in range(n):
                if i == j:
                    continue
                for v in range(k):
                    row = q.row(j, i, v)
                    if i == j + 1:
                        p_w = (1.0 / (n - 1)) * marginals[j][v]
                        if p_w > 0:
                            total += p_w * _cross_entropy(chain.transitions[j][v], row)
                    if u_w > 0:
                        total += u_w * _cross_entropy(uniform, row)
    else:
        boundary = 1.0 / (n * (n - 1))
        for j in range(n):
            for i in range(n):
                if i == j:
                    continue
                for v in range(k):
                    row = q.row(j, i, v)
                    mass = marginals[j][v]
                    if mass <= 0:
                        continue
                    if i == j + 1:
                        w = (1.0 / (n - 1)) * mass
                        total += 0.5 * w * _cross_entropy(chain.transitions[j][v], row)
                        total += 0.5 * w * _cross_entropy(marginals[i], row)
                    else:
                        total += boundary * mass * _cross_entropy(marginals[i], row)
    return total


def scaffolded_expectation(
    minimizer: RiskMinimizer, chain: ChainModel, i: int, j: int, y_j: int
) -> np.ndarray:
    """Exact expectation of the scaffolded Monte Carlo estimate of Y_i given
    Y_j = y_j, walking the blended adjacent conditionals from j to i."""
    if not (0 <= j < chain.n and j + 1 < i < chain.n):
        raise ValueError("need j + 1 < i < n")
    vec = np.zeros(chain.arity)
    vec[y_j] = 1.0
    for m in range(j, i):
        vec = vec @ minimizer.q_matrices[m]
    return vec


def scaffolded_expectation_brute_force(
    minimizer: RiskMinimizer, chain: ChainModel, i: int, j: int, y_j: int
) -> np.ndarray:
    """Oracle for scaffolded_expectation: enumerate every combination of
    scaffold outcomes, weight by the sampling probabilities, and average the
    terminal rows. Exponential in i - j."""
    if not (0 <= j < chain.n and j + 1 < i < chain.n):
        raise ValueError("need j + 1 < i < n")
    k = chain.arity
    out = np.zeros(k)
    middle = i - j - 1

    def recurse(pos: int, prev_value: int, weight: float) -> None:
        nonlocal out
        if pos == middle:
            out += weight * minimizer.q_matrices[i - 1][prev_value]
            return
        row = minimizer.q_matrices[j + pos][prev_value]
        for value in range(k):
            if row[value] > 0.0:
                recurse(pos + 1, value, weight * row[value])

    recurse(0, y_j, 1.0)
    return out


@dataclass(frozen=True)
class GapRow:
    i: int
    j: int
    y_i: int
    y_j: int
    direct_sq: float
    scaffolded_sq: float
    ratio: float
    lambda_product: float
    holds: bool
    vacuous: bool


@dataclass(frozen=True)
class GapReport:
    formulation: str
    rows: tuple[GapRow, ...]
    constant_lambda: bool

    @property
    def n_queries(self) -> int:
        return len(self.rows)

    @property
    def n_vacuous(self) -> int:
        return sum(1 for r in self.rows if r.vacuous)

    @property
    def n_violations(self) -> int:
        return sum(1 for r in self.rows if not r.vacuous and not r.holds)

    def to_summary(self) -> dict:
        return {
            "formulation": self.formulation,
            "n_queries": self.n_queries,
            "n_vacuous": self.n_vacuous,
            "n_violations": self.n_violations,
            "constant_lambda": self.constant_lambda,
        }


def _check_assumptions(chain: ChainModel, formulation: str) -> None:
    if formulation != "uniform_mixture":
        return
    tol = 1e-9
    for t in chain.transitions:
        if np.max(np.abs(t.sum(axis=0) - 1.0)) > tol:
            raise AssumptionViolatedError("transitions must be doubly stochastic")
    if np.max(np.abs(chain.initial - 1.0 / chain.arity)) > tol:
        raise AssumptionViolatedError("initial distribution must be uniform")


def gap_check(
    chain: ChainModel, formulation: str, uniform_weight: float = 1.0
) -> GapReport:
    """Compare scaffolded and direct squared bias for every non-adjacent
    forward query (i > j + 1) and every value pair.

    A query whose direct bias is below 1e-9 carries no dependence signal and
    is flagged vacuous instead of counting either way. When every blending
    weight coincides, the bias ratio collapses to the square of one minus the
    accumulated conditional coefficient, which the report records per row.
    """
    _check_assumptions(chain, formulation)
    minimizer = risk_minimizer(chain, formulation, uniform_weight)
    lam_values = minimizer.lambdas
    constant_lambda = bool(np.max(lam_values) - np.min(lam_values) <= 1e-12)
    rows = []
    for j in range(chain.n - 2):
        for i in range(j + 2, chain.n):
            base = minimizer.base_distribution(i)
            lambda_product = float(np.prod(1.0 - lam_values[j:i].mean(axis=1)))
            for y_j in range(chain.arity):
                cond = chain_conditional(chain, i, j, y_j)
                expect = scaffolded_expectation(minimizer, chain, i, j, y_j)
                for y_i in range(chain.arity):
                    direct_sq = float((base[y_i] - cond[y_i]) ** 2)
                    scaf_sq = float((expect[y_i] - cond[y_i]) ** 2)
                    vacuous = abs(base[y_i] - cond[y_i]) < _VACUOUS_BIAS
                    ratio = scaf_sq / direct_sq if direct_sq > 0.0 else math.nan
                    rows.append(
                        GapRow(
                            i=i,
                            j=j,
                            y_i=y_i,
                            y_j=y_j,
                            direct_sq=direct_sq,
                            scaffolded_sq=scaf_sq,
                            ratio=ratio,
                            lambda_product=lambda_product,
                            holds=scaf_sq < direct_sq,
                            vacuous=vacuous,
                        )
                    )
    return GapReport(formulation=formulation, rows=tuple(rows), constant_lambda=constant_lambda)


@dataclass(frozen=True)
class KlRow:
    edge: int
    value: int
    kl_to_minimizer: float
    kl_to_marginal: float
    holds: bool


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    total = 0.0
    for pi, qi in zip(p, q):
        if pi > 0.0:
            if qi <= 0.0:
                return math.inf
            total += pi * math.log(pi / qi)
    return max(total, 0.0)


def kl_gap_check(chain: ChainModel) -> list[KlRow]:
    """Marginal-mixture corollary: on every edge the blended conditional is at
    least as close in KL to the true conditional as the marginal is."""
    minimizer = risk_minimizer(chain, "marginal_mixture")
    rows = []
    for m in range(chain.n - 1):
        marg_next = minimizer.marginals[m + 1]
        for v in range(chain.arity):
            cond = chain.transitions[m][v]
            lhs = _kl(cond, minimizer.q_matrices[m][v])
            rhs = _kl(cond, marg_next)
            holds = lhs <= rhs + 1e-12
            rows.append(KlRow(edge=m, value=v, kl_to_minimizer=lhs, kl_to_marginal=rhs, holds=holds))
    return rows
