"""Autoregressive conditional-model backends.

Three implementations of the same two-method surface: an oracle that answers
with exact inference over a known net, an empirical count model fit to a
corpus (conditioning on the last context variable, with backoff to the
marginal when a pair was never seen often enough), and a client for a remote
model server speaking newline-delimited JSON.
"""

from __future__ import annotations

import json
import socket
from dataclasses import dataclass, field
from typing import Iterable, Protocol

from .graph import BayesNet, var_name, parse_var_name
from .infer import conditional
from .pipeline import Sample, serialize_sample

__all__ = [
    "ModelError",
    "UnknownVariableError",
    "UnsupportedOperationError",
    "RemoteModelError",
    "PromptState",
    "ValueDistribution",
    "NextVariableDistribution",
    "SequenceModel",
    "OracleModel",
    "EmpiricalBackoffModel",
    "fit_empirical",
    "RemoteModel",
]

DEFAULT_SMOOTHING = 1.0
DEFAULT_BACKOFF_THRESHOLD = 50


class ModelError(Exception):
    pass


class UnknownVariableError(ModelError):
    pass


class UnsupportedOperationError(ModelError):
    pass


class RemoteModelError(ModelError):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


@dataclass(frozen=True)
class PromptState:
    """Declared target plus the variable-value pairs emitted so far."""

    target: int
    context: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        vars_seen = [v for v, _ in self.context]
        if len(vars_seen) != len(set(vars_seen)):
            raise ValueError("context repeats a variable")
        if self.target in vars_seen:
            raise ValueError("target must not already appear in the context")

    def extended(self, var: int, bit: int) -> "PromptState":
        return PromptState(self.target, self.context + ((var, bit),))


@dataclass(frozen=True)
class ValueDistribution:
    """Probability that the queried variable equals 1."""

    p1: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.p1 <= 1.0):
            raise ValueError(f"p1 out of range: {self.p1}")

    def prob(self, bit: int) -> float:
        return self.p1 if bit == 1 else 1.0 - self.p1


@dataclass(frozen=True)
class NextVariableDistribution:
    """Distribution over which variable identifier comes next."""

    probs: dict[int, float]

    def __post_init__(self) -> None:
        total = sum(self.probs.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"next-variable probabilities sum to {total}")


class SequenceModel(Protocol):
    def value_distribution(self, state: PromptState, query: int) -> ValueDistribution: ...

    def next_variable_distribution(self, state: PromptState) -> NextVariableDistribution: ...


class OracleModel:
    """Exact conditionals from a known Bayes net; cannot propose variables.

    Queries are memoized on (query, context) since Monte Carlo estimators
    revisit the same prompt states constantly.
    """

    def __init__(self, net: BayesNet):
        self.net = net
        self._cache: dict[tuple[int, tuple[tuple[int, int], ...]], float] = {}

    def value_distribution(self, state: PromptState, query: int) -> ValueDistribution:
        if not (0 <= query < self.net.n_nodes):
            raise UnknownVariableError(var_name(query) if query >= 0 else str(query))
        for v, _ in state.context:
            if not (0 <= v < self.net.n_nodes):
                raise UnknownVariableError(var_name(v))
        key = (query, tuple(sorted(state.context)))
        p1 = self._cache.get(key)
        if p1 is None:
            p1 = conditional(self.net, query, 1, dict(state.context))
            self._cache[key] = p1
        return ValueDistribution(p1)

    def next_variable_distribution(self, state: PromptState) -> NextVariableDistribution:
        raise UnsupportedOperationError("the oracle backend cannot propose variables")


@dataclass
class EmpiricalBackoffModel:
    """Count model over a corpus: pairwise value counts with marginal backoff.

    ``pair_counts[(a, b)][(va, vb)]`` counts samples where a=va and b=vb
    co-occur (keys ordered a < b); value prediction conditions on the last
    context variable when the pair was seen at least ``backoff_threshold``
    times and otherwise falls back to the smoothed marginal.
    ``id_bigram_counts[(a, b)]`` counts records of b immediately following a
    within a sample, which drives next-variable proposal.
    """

    smoothing: float = DEFAULT_SMOOTHING
    backoff_threshold: int = DEFAULT_BACKOFF_THRESHOLD
    pair_counts: dict[tuple[int, int], dict[tuple[int, int], int]] = field(default_factory=dict)
    id_bigram_counts: dict[tuple[int, int], int] = field(default_factory=dict)
    unigram_counts: dict[int, int] = field(default_factory=dict)
    value_counts: dict[int, list[int]] = field(default_factory=dict)
    tokens_seen: int = 0

    def known_variables(self) -> list[int]:
        return sorted(self.unigram_counts)

    def _pair_value_counts(self, a: int, b: int) -> dict[tuple[int, int], int]:
        if a > b:
            flipped = self.pair_counts.get((b, a), {})
            return {(va, vb): c for (vb, va), c in flipped.items()}
        return self.pair_counts.get((a, b), {})

    def smoothed_marginal(self, query: int) -> float:
        ones, total = 0, 0
        if query in self.value_counts:
            zero, one = self.value_counts[query]
            ones, total = one, zero + one
        return (ones + self.smoothing) / (total + 2.0 * self.smoothing)

    def value_distribution(self, state: PromptState, query: int) -> ValueDistribution:
        if not state.context:
            return ValueDistribution(self.smoothed_marginal(query))
        last_var, last_val = state.context[-1]
        counts = self._pair_value_counts(query, last_var)
        if sum(counts.values()) < self.backoff_threshold:
            return ValueDistribution(self.smoothed_marginal(query))
        n1 = counts.get((1, last_val), 0)
        n0 = counts.get((0, last_val), 0)
        return ValueDistribution((n1 + self.smoothing) / (n0 + n1 + 2.0 * self.smoothing))

    def next_variable_distribution(self, state: PromptState) -> NextVariableDistribution:
        in_context = {v for v, _ in state.context}
        candidates = sorted((set(self.known_variables()) | {state.target}) - in_context)
        if not candidates:
            raise ModelError("no candidate variables remain")
        if state.context:
            last = state.context[-1][0]
            weights = [self.id_bigram_counts.get((last, v), 0) + self.smoothing for v in candidates]
        else:
            weights = [self.unigram_counts.get(v, 0) + self.smoothing for v in candidates]
        total = float(sum(weights))
        return NextVariableDistribution({v: w / total for v, w in zip(candidates, weights)})


def fit_empirical(
    samples: Iterable[Sample],
    smoothing: float = DEFAULT_SMOOTHING,
    backoff_threshold: int = DEFAULT_BACKOFF_THRESHOLD,
) -> EmpiricalBackoffModel:
    """Single pass of co-occurrence, bigram, and unigram counting."""
    model = EmpiricalBackoffModel(smoothing=smoothing, backoff_threshold=backoff_threshold)
    for sample in samples:
        records = sample.records
        for i, (v, bit) in enumerate(records):
            model.unigram_counts[v] = model.unigram_counts.get(v, 0) + 1
            model.value_counts.setdefault(v, [0, 0])[bit] += 1
            if i + 1 < len(records):
                key = (v, records[i + 1][0])
                model.id_bigram_counts[key] = model.id_bigram_counts.get(key, 0) + 1
        by_var = sorted(records)
        for i, (a, va) in enumerate(by_var):
            for b, vb in by_var[i + 1 :]:
                cell = model.pair_counts.setdefault((a, b), {})
                cell[(va, vb)] = cell.get((va, vb), 0) + 1
        model.tokens_seen += len(serialize_sample(sample))
    return model


# --- remote backend --------------------------------------------------------


def _context_wire(context: tuple[tuple[int, int], ...]) -> list[list]:
    return [[var_name(v), bit] for v, bit in context]


class RemoteModel:
    """Client for a model server speaking newline-delimited JSON over TCP.

    One request is in flight per connection; a timeout or malformed reply is
    an error, never a silent default.
    """

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.host = host
        self.port = port
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._file = None

    @staticmethod
    def from_address(address: str, timeout: float = 30.0) -> "RemoteModel":
        host, _, port = address.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"remote address must be host:port, got {address!r}")
        return RemoteModel(host, int(port), timeout=timeout)

    def _connect(self):
        if self._sock is None:
            try:
                self._sock = socket.create_connection(
                    (self.host, self.port), timeout=self.timeout
                )
                self._file = self._sock.makefile("rwb")
            except OSError as exc:
                raise RemoteModelError("remote-unavailable", str(exc)) from exc
        return self._file

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
                self._file = None

    def __enter__(self) -> "RemoteModel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _call(self, payload: dict) -> dict:
        f = self._connect()
        try:
            f.write(json.dumps(payload).encode() + b"\n")
            f.flush()
            line = f.readline()
        except OSError as exc:
            self.close()
            raise RemoteModelError("remote-unavailable", str(exc)) from exc
        if not line:
            self.close()
            raise RemoteModelError("remote-unavailable", "connection closed by server")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RemoteModelError("protocol-error", f"unparsable reply: {line!r}") from exc
        if "error" in reply:
            raise RemoteModelError(str(reply["error"]), str(reply.get("detail", "")))
        return reply

    def value_distribution(self, state: PromptState, query: int) -> ValueDistribution:
        reply = self._call(
            {
                "op": "value_dist",
                "target": var_name(state.target),
                "context": _context_wire(state.context),
                "query": var_name(query),
            }
        )
        if "p1" not in reply:
            raise RemoteModelError("protocol-error", "reply lacks p1")
        return ValueDistribution(float(reply["p1"]))

    def next_variable_distribution(self, state: PromptState) -> NextVariableDistribution:
        reply = self._call(
            {
                "op": "next_var",
                "target": var_name(state.target),
                "context": _context_wire(state.context),
            }
        )
        if "var_probs" not in reply:
            raise RemoteModelError("protocol-error", "reply lacks var_probs")
        in_context = {v for v, _ in state.context}
        probs: dict[int, float] = {}
        for name, p in reply["var_probs"].items():
            try:
                v = parse_var_name(name)
            except ValueError as exc:
                raise RemoteModelError("protocol-error", f"unknown variable {name!r}") from exc
            if v in in_context:
                raise RemoteModelError(
                    "protocol-error", f"{name} already appears in the context"
                )
            probs[v] = float(p)
        return NextVariableDistribution(probs)
