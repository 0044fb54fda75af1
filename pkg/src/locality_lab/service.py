"""FastAPI service wrapping the workbench.

Each endpoint validates a request model, runs one pipeline stage, writes its
artifacts under the request's output directory (never anywhere else), and
returns the artifact paths plus a summary. The runners are plain functions so
the CLI's in-process transport and a deployed server behave identically.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from fastapi import FastAPI, HTTPException

from . import __version__, evaluation, pipeline, theory
from .estimators import EstimatorError
from .graph import (
    generate_dag,
    net_content_hash,
    net_from_json,
    net_to_json,
    var_name,
)
from .infer import InferenceError
from .model import (
    ModelError,
    OracleModel,
    RemoteModel,
    RemoteModelError,
    fit_empirical,
)
from .obsdist import HeldOutPair, ObservationSpec, RadiusDistribution, graph_diameter
from .rng import make_rng
from .schemas import (
    CorpusRequest,
    CorpusResponse,
    EvalRequest,
    EvalResponse,
    GenRequest,
    GenResponse,
    SummaryRowModel,
    TheoryRequest,
    TheoryResponse,
)

GAP_CSV_HEADER = [
    "chain_seed", "formulation", "i", "j", "y_i", "y_j",
    "direct_bias_sq", "scaffolded_bias_sq", "ratio", "lambda_product",
    "holds", "vacuous",
]
KL_CSV_HEADER = ["chain_seed", "edge", "value", "kl_to_minimizer", "kl_to_marginal", "holds"]


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _dump_config(path: Path, request) -> None:
    _write(path, json.dumps(request.model_dump(), indent=2, sort_keys=True) + "\n")


def _pairs_to_doc(net_id: int, sel: pipeline.SelectedNet) -> dict:
    return {
        "net_id": net_id,
        "mean_holdout_mi": sel.mean_holdout_mi,
        "held_out": [[p.a, p.b, p.mi] for p in sel.held_out],
        "top_pairs": [[p.a, p.b, p.mi] for p in sel.top_pairs],
    }


def _pairs_from_doc(doc: dict) -> tuple[HeldOutPair, ...]:
    return tuple(HeldOutPair(int(a), int(b), float(mi)) for a, b, mi in doc["held_out"])


def run_gen(request: GenRequest) -> GenResponse:
    out = Path(request.out_dir)
    params = pipeline.NetParams(
        request.net.n_nodes, request.net.n_edges, request.net.alpha, request.net.beta
    )
    report, selected = pipeline.select_nets_and_pairs(
        request.selection.candidates,
        request.selection.top_pairs,
        request.selection.holdouts,
        request.selection.selected,
        params,
        request.seed,
    )
    net_files, pair_files = [], []
    for sel in selected:
        net_path = out / "nets" / f"net_{sel.net_id:03d}.json"
        pair_path = out / "nets" / f"net_{sel.net_id:03d}.pairs.json"
        _write(net_path, net_to_json(sel.net))
        _write(pair_path, json.dumps(_pairs_to_doc(sel.net_id, sel), indent=2) + "\n")
        net_files.append(str(net_path))
        pair_files.append(str(pair_path))

    report_json = out / "selection_report.json"
    _write(report_json, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["net_id", "pair_a", "pair_b", "mi", "held_out"])
    for sel in selected:
        held = set((p.a, p.b) for p in sel.held_out)
        for p in sel.top_pairs:
            writer.writerow(
                [sel.net_id, var_name(p.a), var_name(p.b), repr(p.mi), int((p.a, p.b) in held)]
            )
    report_csv = out / "selection_report.csv"
    _write(report_csv, buf.getvalue())
    config_file = out / "gen_config.json"
    _dump_config(config_file, request)
    return GenResponse(
        report=report.to_dict(),
        net_files=net_files,
        pair_files=pair_files,
        report_json=str(report_json),
        report_csv=str(report_csv),
        config_file=str(config_file),
    )


def _load_net(net_file: str):
    path = Path(net_file)
    if not path.exists():
        raise FileNotFoundError(f"net file not found: {net_file}")
    text = path.read_text()
    return net_from_json(text), net_content_hash(text)


def _load_pairs(request) -> tuple[HeldOutPair, ...]:
    pairs_file = request.pairs_file
    if pairs_file is None:
        stem = Path(request.net_file)
        pairs_file = str(stem.with_suffix("")) + ".pairs.json"
    path = Path(pairs_file)
    if not path.exists():
        raise FileNotFoundError(f"pairs file not found: {pairs_file}")
    return _pairs_from_doc(json.loads(path.read_text()))


def _build_observation_spec(request: CorpusRequest, net) -> ObservationSpec:
    obs = request.observation
    if obs.mode == "wrong_local":
        if obs.decoy_net_file:
            decoy_net, _ = _load_net(obs.decoy_net_file)
            if decoy_net.n_nodes != net.n_nodes:
                raise ValueError("decoy net must have the same node count")
            graph = decoy_net.dag
        else:
            decoy_seed = obs.decoy_seed if obs.decoy_seed is not None else request.seed + 1000
            graph = generate_dag(net.n_nodes, len(net.dag.edges), make_rng(decoy_seed, 99))
    else:
        graph = net.dag
    k_max = obs.radius.k_max
    if obs.radius.kind == "zipf" and k_max is None:
        k_max = graph_diameter(graph)
    radius = RadiusDistribution(obs.radius.kind, obs.radius.parameter, k_max)
    held_out = _load_pairs(request)
    return ObservationSpec(obs.mode, graph, radius, obs.dropout, held_out)


def _corpus_chunk(net_text: str, spec_doc: dict, seed: int, start: int, end: int) -> str:
    net = net_from_json(net_text)
    spec = pipeline.observation_spec_from_dict(spec_doc, net.dag)
    return "".join(
        pipeline.serialize_sample(s)
        for s in pipeline.generate_corpus(net, spec, end, seed, start=start)
    )


def _count_existing_samples(path: Path) -> int:
    if not path.exists():
        return 0
    return sum(1 for _ in pipeline.iter_corpus_blocks(path.read_text()))


def run_corpus(request: CorpusRequest) -> CorpusResponse:
    out = Path(request.out_dir)
    net, net_ref = _load_net(request.net_file)
    spec = _build_observation_spec(request, net)
    spec_doc = pipeline.observation_spec_to_dict(spec)
    name = request.name or f"{Path(request.net_file).stem}_{spec.mode}"
    corpus_path = out / "corpora" / f"{name}.txt"
    manifest_path = out / "corpora" / f"{name}.manifest.json"
    manifest = pipeline.CorpusManifest(net_ref, spec_doc, request.n_samples, request.seed)

    resumed_from = 0
    if manifest_path.exists() and corpus_path.exists():
        existing = pipeline.CorpusManifest.from_json(manifest_path.read_text())
        if (
            existing.net_ref == manifest.net_ref
            and existing.spec == manifest.spec
            and existing.seed == manifest.seed
        ):
            resumed_from = min(_count_existing_samples(corpus_path), request.n_samples)

    net_text = Path(request.net_file).read_text()
    if resumed_from >= request.n_samples:
        text_len = len(corpus_path.read_text())
    else:
        chunks = []
        if request.workers > 1 and request.n_samples - resumed_from > 1000:
            step = math.ceil((request.n_samples - resumed_from) / request.workers)
            ranges = [
                (s, min(s + step, request.n_samples))
                for s in range(resumed_from, request.n_samples, step)
            ]
            with ProcessPoolExecutor(max_workers=request.workers) as pool:
                futures = [
                    pool.submit(_corpus_chunk, net_text, spec_doc, request.seed, s, e)
                    for s, e in ranges
                ]
                chunks = [f.result() for f in futures]
        else:
            chunks = [_corpus_chunk(net_text, spec_doc, request.seed, resumed_from, request.n_samples)]
        corpus_path.parent.mkdir(parents=True, exist_ok=True)
        mode = "a" if resumed_from > 0 else "w"
        with corpus_path.open(mode) as fh:
            for chunk in chunks:
                fh.write(chunk)
        text_len = corpus_path.stat().st_size
    _write(manifest_path, manifest.to_json())
    config_file = out / "corpora" / f"{name}.config.json"
    _dump_config(config_file, request)
    return CorpusResponse(
        corpus_file=str(corpus_path),
        manifest_file=str(manifest_path),
        config_file=str(config_file),
        n_samples=request.n_samples,
        n_characters=int(text_len),
        resumed_from=resumed_from,
    )


def _build_model(request: EvalRequest, net):
    if request.backend == "oracle":
        return OracleModel(net), None
    if request.backend == "empirical":
        if not request.corpus_file:
            raise ValueError("the empirical backend needs corpus_file")
        text = Path(request.corpus_file).read_text()
        model = fit_empirical(
            pipeline.parse_corpus(text), request.smoothing, request.backoff_threshold
        )
        return model, model.tokens_seen
    address = request.backend.split(":", 1)[1]
    return RemoteModel.from_address(address), None


def run_eval(request: EvalRequest) -> EvalResponse:
    out = Path(request.out_dir)
    net, _ = _load_net(request.net_file)
    pairs = list(_load_pairs(request))
    model, tokens_seen = _build_model(request, net)
    name = request.name or f"{Path(request.net_file).stem}_{request.backend.split(':')[0]}"

    records, skipped, traces = evaluation.evaluate(
        model,
        net,
        pairs,
        tuple(request.estimators),
        request.m_samples,
        seed=request.seed,
        max_steps=request.max_steps,
        net_id=Path(request.net_file).stem,
        corpus_tokens_seen=tokens_seen,
        collect_traces=True,
    )
    summary = evaluation.summarize(records, seed=request.seed)
    records_file = out / "eval" / f"{name}.records.csv"
    _write(records_file, evaluation.records_to_csv(records))

    rate = None
    if traces:
        rate = evaluation.d_separation_rate(traces, net.dag)

    curve_out = None
    if request.budget_tokens:
        if request.backend != "empirical":
            raise ValueError("learning curves need the empirical backend")
        samples = list(pipeline.parse_corpus(Path(request.corpus_file).read_text()))
        curve = evaluation.learning_curve(
            samples,
            sorted(request.budget_tokens),
            net,
            pairs,
            tuple(request.estimators),
            request.m_samples,
            seed=request.seed,
            smoothing=request.smoothing,
            backoff_threshold=request.backoff_threshold,
        )
        curve_out = [
            {"budget": budget, "summary": [row.to_dict() for row in rows]}
            for budget, _, rows in curve
        ]

    sweep_out = None
    if request.m_sweep:
        sweep = evaluation.sample_count_sweep(
            model, net, pairs,
            sorted(request.m_sweep),
            tuple(e for e in request.estimators if e != "direct"),
            seed=request.seed,
        )
        sweep_out = [
            {"m": m, "summary": [row.to_dict() for row in rows]} for m, rows in sweep
        ]

    summary_doc = {
        "backend": request.backend,
        "n_records": len(records),
        "n_skipped": len(skipped),
        "skipped": [
            {"observed": s.query.observed, "target": s.query.target,
             "estimator": s.estimator, "reason": s.reason}
            for s in skipped
        ],
        "free_trace_d_separation_rate": rate,
        "summary": [row.to_dict() for row in summary],
        "learning_curve": curve_out,
        "m_sweep": sweep_out,
    }
    summary_file = out / "eval" / f"{name}.summary.json"
    _write(summary_file, json.dumps(summary_doc, indent=2, sort_keys=True) + "\n")
    config_file = out / "eval" / f"{name}.config.json"
    _dump_config(config_file, request)
    return EvalResponse(
        records_file=str(records_file),
        summary_file=str(summary_file),
        config_file=str(config_file),
        summary=[SummaryRowModel(**row.to_dict()) for row in summary],
        n_records=len(records),
        n_skipped=len(skipped),
        free_trace_d_separation_rate=rate,
        learning_curve=curve_out,
        m_sweep=sweep_out,
    )


def run_theory(request: TheoryRequest) -> TheoryResponse:
    out = Path(request.out_dir)
    formulations = (
        list(theory.FORMULATIONS) if request.formulation == "both" else [request.formulation]
    )
    gap_rows: list[list] = []
    kl_rows: list[list] = []
    n_queries = n_vacuous = n_violations = kl_violations = assumption_violations = 0
    for chain_index in range(request.n_chains):
        chain_seed = request.seed + chain_index
        chain = theory.random_chain(
            request.n, request.arity, make_rng(chain_seed, 7),
            doubly_stochastic=request.doubly_stochastic,
        )
        for formulation in formulations:
            try:
                report = theory.gap_check(chain, formulation, request.uniform_weight)
            except theory.AssumptionViolatedError:
                assumption_violations += 1
                continue
            n_queries += report.n_queries
            n_vacuous += report.n_vacuous
            n_violations += report.n_violations
            for row in report.rows:
                gap_rows.append(
                    [chain_seed, formulation, row.i, row.j, row.y_i, row.y_j,
                     repr(row.direct_sq), repr(row.scaffolded_sq),
                     "" if math.isnan(row.ratio) else repr(row.ratio),
                     repr(row.lambda_product), int(row.holds), int(row.vacuous)]
                )
        for row in theory.kl_gap_check(chain):
            kl_violations += 0 if row.holds else 1
            kl_rows.append(
                [chain_seed, row.edge, row.value,
                 repr(row.kl_to_minimizer), repr(row.kl_to_marginal), int(row.holds)]
            )

    def to_csv(header, rows):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()

    gap_csv = out / "theory" / f"{request.name}_gap.csv"
    kl_csv = out / "theory" / f"{request.name}_kl.csv"
    _write(gap_csv, to_csv(GAP_CSV_HEADER, gap_rows))
    _write(kl_csv, to_csv(KL_CSV_HEADER, kl_rows))

    anchor = None
    if request.n == 3 and "marginal_mixture" in formulations:
        chain = theory.random_chain(3, request.arity, make_rng(request.seed, 7))
        minimizer = theory.risk_minimizer(chain, "marginal_mixture")
        deviations = []
        for y in range(request.arity):
            expect = theory.scaffolded_expectation(minimizer, chain, 2, 0, y)
            blend = 0.75 * theory.chain_marginal(chain, 2) + 0.25 * theory.chain_conditional(
                chain, 2, 0, y
            )
            deviations.append(float(abs(expect - blend).max()))
        anchor = {
            "marginal_weight": 0.75,
            "conditional_weight": 0.25,
            "max_abs_deviation": max(deviations),
        }

    summary_doc = {
        "formulations": formulations,
        "n_chains": request.n_chains,
        "n_queries": n_queries,
        "n_vacuous": n_vacuous,
        "n_violations": n_violations,
        "kl_violations": kl_violations,
        "assumption_violations": assumption_violations,
        "three_chain_anchor": anchor,
    }
    summary_file = out / "theory" / f"{request.name}_summary.json"
    _write(summary_file, json.dumps(summary_doc, indent=2, sort_keys=True) + "\n")
    config_file = out / "theory" / f"{request.name}.config.json"
    _dump_config(config_file, request)
    return TheoryResponse(
        gap_csv=str(gap_csv),
        kl_csv=str(kl_csv),
        summary_file=str(summary_file),
        config_file=str(config_file),
        n_chains=request.n_chains,
        n_queries=n_queries,
        n_vacuous=n_vacuous,
        n_violations=n_violations,
        kl_violations=kl_violations,
        assumption_violations=assumption_violations,
        three_chain_anchor=anchor,
    )


app = FastAPI(title="locality-lab", version=__version__)


@app.get("/healthz")
def healthz() -> dict:
    return {"status": "ok", "version": __version__}


def _run_endpoint(runner, request):
    try:
        return runner(request)
    except FileNotFoundError as exc:
        raise HTTPException(status_code=404, detail=str(exc)) from exc
    except RemoteModelError as exc:
        raise HTTPException(status_code=502, detail=f"{exc.code}: {exc.detail}") from exc
    except (ValueError, KeyError, InferenceError, EstimatorError, ModelError,
            theory.TheoryError, pipeline.PipelineError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


@app.post("/runs/gen", response_model=GenResponse)
def gen_endpoint(request: GenRequest) -> GenResponse:
    return _run_endpoint(run_gen, request)


@app.post("/runs/corpus", response_model=CorpusResponse)
def corpus_endpoint(request: CorpusRequest) -> CorpusResponse:
    return _run_endpoint(run_corpus, request)


@app.post("/runs/eval", response_model=EvalResponse)
def eval_endpoint(request: EvalRequest) -> EvalResponse:
    return _run_endpoint(run_eval, request)


@app.post("/runs/theory", response_model=TheoryResponse)
def theory_endpoint(request: TheoryRequest) -> TheoryResponse:
    return _run_endpoint(run_theory, request)
