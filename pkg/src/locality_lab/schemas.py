"""Pydantic request/response models for the workbench service.

Every request model doubles as the on-disk effective-config snapshot: each
run writes its validated request back out as JSON, and feeding that file to
the CLI reproduces the run bit for bit.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, field_validator

DEFAULT_ESTIMATORS = ["direct", "scaffolded", "negative_scaffolded", "free"]


class NetParamsModel(BaseModel):
    n_nodes: int = Field(default=20, ge=1)
    n_edges: int = Field(default=20, ge=0)
    alpha: float = Field(default=0.2, gt=0)
    beta: float = Field(default=0.2, gt=0)


class SelectionModel(BaseModel):
    candidates: int = Field(default=10, ge=1)
    top_pairs: int = Field(default=10, ge=1)
    holdouts: int = Field(default=5, ge=0)
    selected: int = Field(default=2, ge=1)


class RadiusModel(BaseModel):
    kind: Literal["geometric", "zipf"] = "geometric"
    parameter: float = 0.5
    k_max: int | None = None  # zipf truncation; None means the graph diameter


class ObservationModel(BaseModel):
    mode: Literal["local", "wrong_local", "fully_observed"] = "local"
    radius: RadiusModel = RadiusModel()
    dropout: float = Field(default=0.2, ge=0.0, lt=1.0)
    decoy_net_file: str | None = None
    decoy_seed: int | None = None


class GenRequest(BaseModel):
    seed: int = 0
    out_dir: str
    net: NetParamsModel = NetParamsModel()
    selection: SelectionModel = SelectionModel()


class GenResponse(BaseModel):
    report: dict
    net_files: list[str]
    pair_files: list[str]
    report_json: str
    report_csv: str
    config_file: str


class CorpusRequest(BaseModel):
    seed: int = 0
    out_dir: str
    net_file: str
    pairs_file: str | None = None  # defaults to <net_file stem>.pairs.json
    observation: ObservationModel = ObservationModel()
    n_samples: int = Field(default=100_000, ge=1)
    workers: int = Field(default=1, ge=1)
    name: str | None = None


class CorpusResponse(BaseModel):
    corpus_file: str
    manifest_file: str
    config_file: str
    n_samples: int
    n_characters: int
    resumed_from: int


class EvalRequest(BaseModel):
    seed: int = 0
    out_dir: str
    net_file: str
    pairs_file: str | None = None
    backend: str = "empirical"  # oracle | empirical | remote:<host:port>
    corpus_file: str | None = None
    estimators: list[str] = Field(default_factory=lambda: list(DEFAULT_ESTIMATORS))
    m_samples: int = Field(default=10, ge=1)
    max_steps: int | None = None
    smoothing: float = 1.0
    backoff_threshold: int = 50
    budget_tokens: list[int] | None = None
    m_sweep: list[int] | None = None
    name: str | None = None

    @field_validator("backend")
    @classmethod
    def _check_backend(cls, value: str) -> str:
        if value in ("oracle", "empirical") or value.startswith("remote:"):
            return value
        raise ValueError("backend must be oracle, empirical, or remote:<host:port>")


class SummaryRowModel(BaseModel):
    estimator: str
    n: int
    mse_true: float
    mse_true_ci: list[float]
    mse_marginal: float
    mse_marginal_ci: list[float]


class EvalResponse(BaseModel):
    records_file: str
    summary_file: str
    config_file: str
    summary: list[SummaryRowModel]
    n_records: int
    n_skipped: int
    free_trace_d_separation_rate: float | None = None
    learning_curve: list[dict] | None = None
    m_sweep: list[dict] | None = None


class TheoryRequest(BaseModel):
    seed: int = 0
    out_dir: str
    n_chains: int = Field(default=200, ge=1)
    n: int = Field(default=10, ge=3)
    arity: int = Field(default=2, ge=2)
    formulation: Literal["marginal_mixture", "uniform_mixture", "both"] = "both"
    uniform_weight: float = Field(default=1.0, ge=0.0)
    doubly_stochastic: bool = True
    name: str = "theory"


class TheoryResponse(BaseModel):
    gap_csv: str
    kl_csv: str
    summary_file: str
    config_file: str
    n_chains: int
    n_queries: int
    n_vacuous: int
    n_violations: int
    kl_violations: int
    assumption_violations: int
    three_chain_anchor: dict | None = None
