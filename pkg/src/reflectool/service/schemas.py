"""Request/response models for the service endpoints.

Paths in requests refer to the filesystem the service runs on; the CLI runs
an embedded service by default, so they are ordinarily local paths.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class BackendSpec(BaseModel):
    kind: Literal["scripted", "http"]
    script_path: str | None = None
    base_url: str | None = None
    model: str = "default"
    seed: int | None = None


class EnvSpec(BaseModel):
    """Resources the toolbox draws on; a tables directory is registered
    under its basename so tasks can reference it by that name."""

    tables_dir: str | None = None
    corpus_path: str | None = None
    gazetteer_path: str | None = None


class VerifierSpec(BaseModel):
    mode: Literal["none", "refine", "select"] = "none"
    n: int = Field(default=1, ge=1)


class OptimizeRequest(BaseModel):
    suite_path: str
    out_dir: str
    backend: BackendSpec
    env: EnvSpec = EnvSpec()
    checkpoint_every: int = Field(default=5, ge=1)
    max_steps: int = Field(default=10, ge=1)
    always_reflect: bool = False


class CheckpointInfo(BaseModel):
    step: int
    memory: str
    ledger: str


class OptimizeReportSummary(BaseModel):
    task_id: str
    c1_outcome: str
    c2_outcome: str | None
    memory_added: bool
    suggestions_merged: int


class OptimizeResponse(BaseModel):
    tasks: int
    memory_size: int
    memory_added: int
    suggestions_merged: int
    checkpoints: list[CheckpointInfo]
    manifest_path: str
    reports: list[OptimizeReportSummary]


class MetricsModel(BaseModel):
    accuracy: float
    step_error_rate: float
    task_error_rate: float
    mean_steps: float
    runtime_seconds_per_task: float


class InferRequest(BaseModel):
    suite_path: str
    out_dir: str
    backend: BackendSpec
    env: EnvSpec = EnvSpec()
    memory_path: str | None = None
    ledger_path: str | None = None
    verifier: VerifierSpec = VerifierSpec()
    demo_k: int = Field(default=2, ge=0)
    max_steps: int = Field(default=10, ge=1)
    prompt_budget_chars: int = Field(default=12000, ge=1)
    workers: int = Field(default=1, ge=1)
    tool_steps_only: bool = False


class InferResponse(BaseModel):
    metrics: MetricsModel
    trajectories_path: str
    records_path: str
    metrics_path: str


class SweepOptimizationRequest(BaseModel):
    suite_path: str
    run_dir: str
    out_csv: str
    backend: BackendSpec
    env: EnvSpec = EnvSpec()
    verifier: VerifierSpec = VerifierSpec()
    demo_k: int = Field(default=2, ge=0)
    max_steps: int = Field(default=10, ge=1)
    tool_steps_only: bool = False


class SweepVerificationRequest(BaseModel):
    suite_path: str
    memory_path: str | None = None
    ledger_path: str | None = None
    n_values: list[int]
    out_csv: str
    backend: BackendSpec
    env: EnvSpec = EnvSpec()
    demo_k: int = Field(default=2, ge=0)
    max_steps: int = Field(default=10, ge=1)
    tool_steps_only: bool = False


class SweepResponse(BaseModel):
    rows: list[dict]
    csv_path: str


class ReportRequest(BaseModel):
    records_path: str
    format: Literal["json", "csv"] = "json"
    out_path: str
    tool_steps_only: bool = False


class ReportResponse(BaseModel):
    metrics: MetricsModel
    out_path: str


class RetrieveRequest(BaseModel):
    memory_path: str
    query: str
    k: int = Field(default=2, ge=1)


class RetrievedEntry(BaseModel):
    task_id: str
    instruction: str
    score: float


class RetrieveResponse(BaseModel):
    entries: list[RetrievedEntry]


class CalculatorRequest(BaseModel):
    expression: str


class CalculatorResponse(BaseModel):
    result: str
