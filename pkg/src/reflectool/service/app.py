"""FastAPI application exposing the two-stage runtime.

Endpoints are synchronous: suite runs are CPU-bound batch jobs and FastAPI
executes them on its worker threadpool.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from reflectool import __version__
from reflectool.agent import AgentConfig
from reflectool.backend import Backend, HttpBackend, ScriptedBackend
from reflectool.errors import BackendError, FormatError
from reflectool.experience import ExperienceLedger
from reflectool.harness import (
    SWEEP_OPT_COLUMNS,
    SWEEP_VERIFY_COLUMNS,
    emit_report,
    evaluate,
    load_manifest,
    load_records,
    load_suite,
    metrics_from_records,
    sweep_optimization_steps,
    sweep_verification_size,
    write_run_outputs,
)
from reflectool.memory import MemoryStore
from reflectool.optimizer import optimize_suite
from reflectool.service import schemas
from reflectool.toolbox.calculator import CalculatorError, calculator_eval, format_number
from reflectool.toolbox.entities import load_gazetteer
from reflectool.toolbox.registry import ToolEnv, default_registry
from reflectool.toolbox.retrieval import load_corpus
from reflectool.toolbox.tables import load_table_store
from reflectool.verifier import VerifierConfig, VerifierMode

_VERIFIER_MODES = {
    "none": VerifierMode.NONE,
    "refine": VerifierMode.ITERATIVE_REFINEMENT,
    "select": VerifierMode.CANDIDATE_SELECTION,
}


def build_backend_factory(spec: schemas.BackendSpec) -> Callable[[], Backend]:
    """Factory so each evaluation run gets a fresh backend (scripted cursors
    are stateful)."""
    if spec.kind == "scripted":
        if not spec.script_path:
            raise FormatError("scripted backend requires script_path")
        path = spec.script_path
        return lambda: ScriptedBackend.from_file(path)
    if not spec.base_url:
        raise FormatError("http backend requires base_url")
    return lambda: HttpBackend(base_url=spec.base_url, model=spec.model, seed=spec.seed)


def build_env(spec: schemas.EnvSpec) -> ToolEnv:
    env = ToolEnv(registry=default_registry())
    if spec.tables_dir:
        store = load_table_store(spec.tables_dir)
        env.table_stores[Path(spec.tables_dir).name] = store
    if spec.corpus_path:
        env.corpus = load_corpus(spec.corpus_path)
    if spec.gazetteer_path:
        env.gazetteer = load_gazetteer(spec.gazetteer_path)
    return env


def build_verifier(spec: schemas.VerifierSpec) -> VerifierConfig:
    return VerifierConfig(mode=_VERIFIER_MODES[spec.mode], n=spec.n)


def _load_snapshots(
    memory_path: str | None, ledger_path: str | None
) -> tuple[MemoryStore | None, ExperienceLedger | None]:
    memory = MemoryStore.load(memory_path) if memory_path else None
    ledger = ExperienceLedger.load(ledger_path) if ledger_path else None
    return memory, ledger


def create_app() -> FastAPI:
    app = FastAPI(title="reflectool", version=__version__)

    @app.exception_handler(FormatError)
    async def format_error(request: Request, exc: FormatError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"error": "FormatError", "detail": str(exc)})

    @app.exception_handler(BackendError)
    async def backend_error(request: Request, exc: BackendError) -> JSONResponse:
        return JSONResponse(status_code=502, content={"error": "BackendError", "detail": str(exc)})

    @app.exception_handler(OSError)
    async def os_error(request: Request, exc: OSError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"error": "IOError", "detail": str(exc)})

    @app.exception_handler(CalculatorError)
    async def calc_error(request: Request, exc: CalculatorError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"error": exc.label, "detail": str(exc)})

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/optimize", response_model=schemas.OptimizeResponse)
    def optimize(req: schemas.OptimizeRequest) -> schemas.OptimizeResponse:
        suite = load_suite(req.suite_path)
        env = build_env(req.env)
        backend = build_backend_factory(req.backend)()
        memory = MemoryStore()
        ledger = ExperienceLedger(env.registry.names())
        reports = optimize_suite(
            suite,
            memory,
            ledger,
            env,
            backend,
            req.out_dir,
            checkpoint_every=req.checkpoint_every,
            max_steps=req.max_steps,
            always_reflect=req.always_reflect,
        )
        checkpoints = load_manifest(req.out_dir)
        return schemas.OptimizeResponse(
            tasks=len(suite),
            memory_size=len(memory),
            memory_added=sum(r.memory_added for r in reports),
            suggestions_merged=sum(r.suggestions_merged for r in reports),
            checkpoints=[schemas.CheckpointInfo(**cp) for cp in checkpoints],
            manifest_path=str(Path(req.out_dir) / "manifest.json"),
            reports=[
                schemas.OptimizeReportSummary(
                    task_id=r.task_id,
                    c1_outcome=r.c1.outcome.value,
                    c2_outcome=r.c2.outcome.value if r.c2 is not None else None,
                    memory_added=r.memory_added,
                    suggestions_merged=r.suggestions_merged,
                )
                for r in reports
            ],
        )

    @app.post("/infer", response_model=schemas.InferResponse)
    def infer(req: schemas.InferRequest) -> schemas.InferResponse:
        suite = load_suite(req.suite_path)
        env = build_env(req.env)
        memory, ledger = _load_snapshots(req.memory_path, req.ledger_path)
        cfg = AgentConfig(
            max_steps=req.max_steps,
            demo_k=req.demo_k,
            verifier=build_verifier(req.verifier),
            prompt_budget_chars=req.prompt_budget_chars,
        )
        result = evaluate(
            suite,
            cfg,
            env,
            build_backend_factory(req.backend),
            memory=memory,
            ledger=ledger,
            workers=req.workers,
            tool_steps_only=req.tool_steps_only,
        )
        paths = write_run_outputs(req.out_dir, result)
        return schemas.InferResponse(
            metrics=schemas.MetricsModel(**result.metrics.to_dict()),
            trajectories_path=paths["trajectories"],
            records_path=paths["records"],
            metrics_path=paths["metrics"],
        )

    @app.post("/sweep/optimization", response_model=schemas.SweepResponse)
    def sweep_optimization(req: schemas.SweepOptimizationRequest) -> schemas.SweepResponse:
        suite = load_suite(req.suite_path)
        env = build_env(req.env)
        cfg = AgentConfig(
            max_steps=req.max_steps,
            demo_k=req.demo_k,
            verifier=build_verifier(req.verifier),
        )
        rows = sweep_optimization_steps(
            suite,
            req.run_dir,
            cfg,
            env,
            build_backend_factory(req.backend),
            tool_steps_only=req.tool_steps_only,
        )
        emit_report(rows, "csv", req.out_csv, columns=SWEEP_OPT_COLUMNS)
        return schemas.SweepResponse(rows=rows, csv_path=req.out_csv)

    @app.post("/sweep/verification", response_model=schemas.SweepResponse)
    def sweep_verification(req: schemas.SweepVerificationRequest) -> schemas.SweepResponse:
        suite = load_suite(req.suite_path)
        env = build_env(req.env)
        memory, ledger = _load_snapshots(req.memory_path, req.ledger_path)
        cfg = AgentConfig(max_steps=req.max_steps, demo_k=req.demo_k)
        rows = sweep_verification_size(
            suite,
            req.n_values,
            cfg,
            env,
            build_backend_factory(req.backend),
            memory=memory,
            ledger=ledger,
            tool_steps_only=req.tool_steps_only,
        )
        emit_report(rows, "csv", req.out_csv, columns=SWEEP_VERIFY_COLUMNS)
        return schemas.SweepResponse(rows=rows, csv_path=req.out_csv)

    @app.post("/report", response_model=schemas.ReportResponse)
    def report(req: schemas.ReportRequest) -> schemas.ReportResponse:
        records = load_records(req.records_path)
        metrics = metrics_from_records(records, tool_steps_only=req.tool_steps_only)
        emit_report([metrics.to_dict()], req.format, req.out_path)
        return schemas.ReportResponse(
            metrics=schemas.MetricsModel(**metrics.to_dict()), out_path=req.out_path
        )

    @app.post("/memory/retrieve", response_model=schemas.RetrieveResponse)
    def memory_retrieve(req: schemas.RetrieveRequest) -> schemas.RetrieveResponse:
        store = MemoryStore.load(req.memory_path)
        scored = store.retrieve_scored(req.query, req.k)
        return schemas.RetrieveResponse(
            entries=[
                schemas.RetrievedEntry(
                    task_id=entry.task.id,
                    instruction=entry.task.instruction,
                    score=score,
                )
                for entry, score in scored
            ]
        )

    @app.post("/tools/calculator", response_model=schemas.CalculatorResponse)
    def tools_calculator(req: schemas.CalculatorRequest) -> schemas.CalculatorResponse:
        return schemas.CalculatorResponse(result=format_number(calculator_eval(req.expression)))

    return app


app = create_app()
