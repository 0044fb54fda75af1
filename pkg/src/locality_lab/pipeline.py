"""End-to-end data pipeline.

Candidate nets are generated and ranked by held-out-pair mutual information,
corpora are sampled under an observation spec, and samples are serialized in
the training text format: a ``###`` marker line, a ``target:`` header naming
the final variable, then one ``name=bit`` line per record.

Corpus generation draws one private random substream per sample index, so
output is byte-identical for a fixed seed no matter how work is scheduled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .graph import (
    BayesNet,
    Dag,
    ancestral_sample,
    assign_cpts,
    generate_dag,
    var_name,
    parse_var_name,
)
from .infer import mutual_information
from .obsdist import HeldOutPair, ObservationSpec, RadiusDistribution, select_variables
from .rng import make_rng

__all__ = [
    "PipelineError",
    "MalformedLineError",
    "TargetMismatchError",
    "DegenerateSelectionError",
    "Sample",
    "NetParams",
    "SelectedNet",
    "SelectionReport",
    "CorpusManifest",
    "CorpusStats",
    "select_nets_and_pairs",
    "generate_corpus",
    "serialize_sample",
    "parse_sample",
    "iter_corpus_blocks",
    "parse_corpus",
    "corpus_stats",
    "observation_spec_to_dict",
    "observation_spec_from_dict",
]

CORPUS_FORMAT_VERSION = "1"

# substream branch tags under the run seed
_STREAM_NET = 1
_STREAM_SAMPLE = 2

# redraws allowed while waiting for a selection with at least two variables
_MAX_SELECTION_ATTEMPTS = 1000


class PipelineError(Exception):
    pass


class MalformedLineError(PipelineError):
    """A corpus line does not match the sample grammar."""


class TargetMismatchError(PipelineError):
    """The target header names a different variable than the last record."""


class DegenerateSelectionError(PipelineError):
    """The observation spec kept producing empty selections."""


@dataclass(frozen=True)
class Sample:
    """Ordered variable-value records; the target is the final record's variable."""

    records: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if not self.records:
            raise ValueError("a sample needs at least one record")
        seen = [v for v, _ in self.records]
        if len(seen) != len(set(seen)):
            raise ValueError("a variable appears twice in one sample")
        if any(bit not in (0, 1) for _, bit in self.records):
            raise ValueError("record values must be bits")

    @property
    def target(self) -> int:
        return self.records[-1][0]

    @property
    def variables(self) -> set[int]:
        return {v for v, _ in self.records}


def serialize_sample(sample: Sample) -> str:
    lines = ["###", f"target: {var_name(sample.target)}"]
    lines.extend(f"{var_name(v)}={bit}" for v, bit in sample.records)
    return "\n".join(lines) + "\n"


def parse_sample(text: str) -> Sample:
    """Inverse of :func:`serialize_sample`; validates the target-last invariant."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines = lines[:-1]
    if len(lines) < 3 or lines[0] != "###":
        raise MalformedLineError("sample must start with '###' and hold a record")
    header = lines[1]
    if not header.startswith("target: "):
        raise MalformedLineError(f"bad target header: {header!r}")
    try:
        target = parse_var_name(header[len("target: ") :])
    except ValueError as exc:
        raise MalformedLineError(str(exc)) from exc
    records = []
    for line in lines[2:]:
        name, sep, value = line.partition("=")
        if sep != "=" or value not in ("0", "1"):
            raise MalformedLineError(f"bad record line: {line!r}")
        try:
            records.append((parse_var_name(name), int(value)))
        except ValueError as exc:
            raise MalformedLineError(str(exc)) from exc
    sample = Sample(tuple(records))
    if sample.target != target:
        raise TargetMismatchError(
            f"header names {var_name(target)} but the last record is "
            f"{var_name(sample.target)}"
        )
    return sample


def iter_corpus_blocks(text: str) -> Iterator[str]:
    """Split concatenated serialized samples back into single-sample blocks."""
    start = None
    lines = text.split("\n")
    block: list[str] = []
    for line in lines:
        if line == "###":
            if block:
                yield "\n".join(block) + "\n"
            block = [line]
        elif block or line:
            block.append(line)
    if block and block != [""]:
        if block[-1] == "":
            block = block[:-1]
        yield "\n".join(block) + "\n"


def parse_corpus(text: str) -> Iterator[Sample]:
    for block in iter_corpus_blocks(text):
        yield parse_sample(block)


@dataclass(frozen=True)
class NetParams:
    n_nodes: int = 20
    n_edges: int = 20
    alpha: float = 0.2
    beta: float = 0.2


@dataclass(frozen=True)
class SelectedNet:
    net_id: int
    net: BayesNet
    held_out: tuple[HeldOutPair, ...]
    top_pairs: tuple[HeldOutPair, ...]
    mean_holdout_mi: float


@dataclass(frozen=True)
class SelectionReport:
    candidate_count: int
    top_pair_count: int
    holdout_count: int
    selected_net_count: int
    mean_holdout_mi: dict[int, float]
    chosen_net_ids: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "candidate_count": self.candidate_count,
            "top_pair_count": self.top_pair_count,
            "holdout_count": self.holdout_count,
            "selected_net_count": self.selected_net_count,
            "mean_holdout_mi": {str(k): v for k, v in sorted(self.mean_holdout_mi.items())},
            "chosen_net_ids": list(self.chosen_net_ids),
        }


def _ranked_nonadjacent_pairs(net: BayesNet) -> list[HeldOutPair]:
    dag = net.dag
    pairs = []
    for a in range(dag.n_nodes):
        for b in range(a + 1, dag.n_nodes):
            if not dag.adjacent(a, b):
                pairs.append(HeldOutPair(a, b, mutual_information(net, a, b)))
    pairs.sort(key=lambda p: (-p.mi, p.a, p.b))
    return pairs


def select_nets_and_pairs(
    n_candidates: int,
    n_top_pairs: int,
    n_holdout: int,
    n_selected: int,
    net_params: NetParams,
    seed: int,
) -> tuple[SelectionReport, list[SelectedNet]]:
    """Generate candidate nets, pick held-out pairs, keep the best nets.

    Per candidate net the non-adjacent pairs are ranked by exact mutual
    information; the top ``n_top_pairs`` survive and ``n_holdout`` of them are
    drawn uniformly as the held-out set. The ``n_selected`` nets with the
    highest mean held-out MI win.
    """
    if n_holdout > n_top_pairs:
        raise ValueError("cannot hold out more pairs than were kept")
    if n_selected > n_candidates:
        raise ValueError("cannot select more nets than candidates")

    candidates: list[SelectedNet] = []
    means: dict[int, float] = {}
    for net_id in range(n_candidates):
        rng = make_rng(seed, _STREAM_NET, net_id)
        dag = generate_dag(net_params.n_nodes, net_params.n_edges, rng)
        net = assign_cpts(dag, net_params.alpha, net_params.beta, rng)
        ranked = _ranked_nonadjacent_pairs(net)
        top = tuple(ranked[:n_top_pairs])
        take = min(n_holdout, len(top))
        idx = sorted(rng.choice(len(top), size=take, replace=False).tolist()) if top else []
        held_out = tuple(top[i] for i in idx)
        mean_mi = sum(p.mi for p in held_out) / len(held_out) if held_out else 0.0
        means[net_id] = mean_mi
        candidates.append(SelectedNet(net_id, net, held_out, top, mean_mi))

    order = sorted(candidates, key=lambda c: (-c.mean_holdout_mi, c.net_id))
    chosen = order[:n_selected]
    report = SelectionReport(
        candidate_count=n_candidates,
        top_pair_count=n_top_pairs,
        holdout_count=n_holdout,
        selected_net_count=n_selected,
        mean_holdout_mi=means,
        chosen_net_ids=tuple(c.net_id for c in chosen),
    )
    return report, chosen


def _draw_subset(net: BayesNet, spec: ObservationSpec, rng) -> set[int]:
    fallback: set[int] | None = None
    for _ in range(_MAX_SELECTION_ATTEMPTS):
        subset = select_variables(spec, rng)
        if len(subset) >= 2 or len(subset) >= net.n_nodes:
            return subset
        if len(subset) == 1 and fallback is None:
            fallback = subset
    if fallback is not None:
        return fallback
    raise DegenerateSelectionError(
        f"no usable selection after {_MAX_SELECTION_ATTEMPTS} attempts"
    )


def generate_corpus(
    net: BayesNet,
    spec: ObservationSpec,
    n_samples: int,
    seed: int,
    start: int = 0,
) -> Iterator[Sample]:
    """Yield samples ``start`` .. ``n_samples - 1`` for the run seed.

    Each sample owns the substream keyed by its index: subset selection
    (redrawing degenerate selections), one ancestral world restricted to the
    subset, and a uniform record permutation all come from that stream, so
    regeneration of any index range is consistent with a full run.
    """
    for index in range(start, n_samples):
        rng = make_rng(seed, _STREAM_SAMPLE, index)
        subset = _draw_subset(net, spec, rng)
        world = ancestral_sample(net, rng, only=subset)
        order = [int(i) for i in rng.permutation(sorted(subset))]
        yield Sample(tuple((v, world[v]) for v in order))


@dataclass(frozen=True)
class CorpusManifest:
    net_ref: str
    spec: dict
    n_samples: int
    seed: int
    format_version: str = CORPUS_FORMAT_VERSION

    def to_json(self) -> str:
        return json.dumps(
            {
                "format_version": self.format_version,
                "net_ref": self.net_ref,
                "spec": self.spec,
                "n_samples": self.n_samples,
                "seed": self.seed,
            },
            indent=2,
            sort_keys=True,
        ) + "\n"

    @staticmethod
    def from_json(text: str) -> "CorpusManifest":
        doc = json.loads(text)
        return CorpusManifest(
            net_ref=doc["net_ref"],
            spec=doc["spec"],
            n_samples=int(doc["n_samples"]),
            seed=int(doc["seed"]),
            format_version=str(doc["format_version"]),
        )


def observation_spec_to_dict(spec: ObservationSpec) -> dict:
    doc: dict = {
        "mode": spec.mode,
        "radius": {
            "kind": spec.radius.kind,
            "parameter": spec.radius.parameter,
            "k_max": spec.radius.k_max,
        },
        "dropout": spec.dropout,
        "held_out": [[p.a, p.b, p.mi] for p in spec.held_out],
    }
    if spec.mode == "wrong_local":
        doc["locality_graph"] = {
            "n_nodes": spec.locality_graph.n_nodes,
            "edges": sorted(spec.locality_graph.edges),
        }
    return doc


def observation_spec_from_dict(doc: dict, data_dag: Dag) -> ObservationSpec:
    radius = RadiusDistribution(
        kind=doc["radius"]["kind"],
        parameter=float(doc["radius"]["parameter"]),
        k_max=doc["radius"]["k_max"],
    )
    held_out = tuple(HeldOutPair(int(a), int(b), float(mi)) for a, b, mi in doc["held_out"])
    if doc["mode"] == "wrong_local":
        g = doc["locality_graph"]
        dag = Dag(int(g["n_nodes"]), frozenset((int(u), int(v)) for u, v in g["edges"]))
    else:
        dag = data_dag
    return ObservationSpec(
        mode=doc["mode"],
        locality_graph=dag,
        radius=radius,
        dropout=float(doc["dropout"]),
        held_out=held_out,
    )


@dataclass
class CorpusStats:
    n_samples: int = 0
    n_records: int = 0
    n_characters: int = 0
    variable_frequency: dict[int, int] = field(default_factory=dict)
    pair_cooccurrence: dict[tuple[int, int], int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_records": self.n_records,
            "n_characters": self.n_characters,
            "variable_frequency": {
                var_name(v): c for v, c in sorted(self.variable_frequency.items())
            },
        }


def corpus_stats(samples: Iterable[Sample]) -> CorpusStats:
    """Single-pass exact counts over a sample stream."""
    stats = CorpusStats()
    for sample in samples:
        stats.n_samples += 1
        stats.n_records += len(sample.records)
        stats.n_characters += len(serialize_sample(sample))
        ordered = sorted(sample.variables)
        for i, v in enumerate(ordered):
            stats.variable_frequency[v] = stats.variable_frequency.get(v, 0) + 1
            for w in ordered[i + 1 :]:
                key = (v, w)
                stats.pair_cooccurrence[key] = stats.pair_cooccurrence.get(key, 0) + 1
    return stats
