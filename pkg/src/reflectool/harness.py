"""Suite loading, evaluation metrics, sweeps, and report emission.

Per-task records are written as JSONL so every metric can be recomputed
post-hoc; trajectory JSONL is fully deterministic for scripted runs (wall
clock times live only in the records and metrics files).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from reflectool.agent import AgentConfig, RunResult, run_task
from reflectool.backend import Backend
from reflectool.errors import FormatError, ParseError
from reflectool.experience import ExperienceLedger
from reflectool.memory import MemoryStore
from reflectool.model import (
    INNER_ACTIONS,
    ObservationStatus,
    Outcome,
    TaskInstance,
    task_from_dict,
    trajectory_to_dict,
)
from reflectool.toolbox.registry import ToolEnv
from reflectool.verifier import VerifierConfig, VerifierMode

logger = logging.getLogger(__name__)

METRIC_FIELDS = (
    "accuracy",
    "step_error_rate",
    "task_error_rate",
    "mean_steps",
    "runtime_seconds_per_task",
)
SWEEP_OPT_COLUMNS = ("checkpoint",) + METRIC_FIELDS
SWEEP_VERIFY_COLUMNS = ("mode", "n") + METRIC_FIELDS


@dataclass(frozen=True)
class SuiteMetrics:
    accuracy: float
    step_error_rate: float
    task_error_rate: float
    mean_steps: float
    runtime_seconds_per_task: float

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_FIELDS}


@dataclass
class TaskRecord:
    task_id: str
    outcome: str
    matched: bool
    final_answer: str | None
    steps: int
    tool_steps: int
    selection_error_steps: int
    verifier_fallbacks: int
    runtime_seconds: float

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "outcome": self.outcome,
            "matched": self.matched,
            "final_answer": self.final_answer,
            "steps": self.steps,
            "tool_steps": self.tool_steps,
            "selection_error_steps": self.selection_error_steps,
            "verifier_fallbacks": self.verifier_fallbacks,
            "runtime_seconds": self.runtime_seconds,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskRecord":
        return cls(
            task_id=data["task_id"],
            outcome=data["outcome"],
            matched=bool(data["matched"]),
            final_answer=data.get("final_answer"),
            steps=int(data["steps"]),
            tool_steps=int(data["tool_steps"]),
            selection_error_steps=int(data["selection_error_steps"]),
            verifier_fallbacks=int(data.get("verifier_fallbacks", 0)),
            runtime_seconds=float(data["runtime_seconds"]),
        )


@dataclass
class EvaluationResult:
    metrics: SuiteMetrics
    records: list[TaskRecord]
    trajectories: list[dict]


def load_suite(path: str | Path) -> list[TaskInstance]:
    """JSONL, one task per line; FormatError (with line number) on bad lines
    or duplicate ids."""
    tasks: list[TaskInstance] = []
    seen: set[str] = set()
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read suite {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            task = task_from_dict(json.loads(line))
        except (json.JSONDecodeError, ParseError) as exc:
            raise FormatError(f"{path} line {lineno}: {exc}") from exc
        if task.id in seen:
            raise FormatError(f"{path} line {lineno}: duplicate task id {task.id!r}")
        seen.add(task.id)
        tasks.append(task)
    return tasks


def _record_from_run(task: TaskInstance, result: RunResult, runtime: float) -> TaskRecord:
    traj = result.trajectory
    flagged = sum(
        1
        for step in traj.steps
        if step.observation.status is ObservationStatus.SELECTION_ERROR
    )
    tool_steps = sum(
        1 for step in traj.steps if step.invocation.action_name not in INNER_ACTIONS
    )
    return TaskRecord(
        task_id=task.id,
        outcome=traj.outcome.value,
        matched=traj.outcome is Outcome.SUCCESS,
        final_answer=traj.final_answer,
        steps=len(traj.steps),
        tool_steps=tool_steps,
        selection_error_steps=flagged,
        verifier_fallbacks=result.verifier_fallbacks,
        runtime_seconds=runtime,
    )


def metrics_from_records(
    records: Sequence[TaskRecord], tool_steps_only: bool = False
) -> SuiteMetrics:
    """Pure fold over per-task records; rerunning it on the emitted JSONL
    reproduces the live metrics exactly.

    ``tool_steps_only`` switches the step-error denominator from all steps to
    tool steps only.
    """
    n = len(records)
    if n == 0:
        return SuiteMetrics(0.0, 0.0, 0.0, 0.0, 0.0)
    total_steps = sum(r.tool_steps if tool_steps_only else r.steps for r in records)
    flagged_steps = sum(r.selection_error_steps for r in records)
    return SuiteMetrics(
        accuracy=100.0 * sum(r.matched for r in records) / n,
        step_error_rate=(100.0 * flagged_steps / total_steps) if total_steps else 0.0,
        task_error_rate=100.0 * sum(r.selection_error_steps > 0 for r in records) / n,
        mean_steps=sum(r.steps for r in records) / n,
        runtime_seconds_per_task=sum(r.runtime_seconds for r in records) / n,
    )


def evaluate(
    suite: Sequence[TaskInstance],
    cfg: AgentConfig,
    env: ToolEnv,
    backend_factory: Callable[[], Backend],
    memory: MemoryStore | None = None,
    ledger: ExperienceLedger | None = None,
    workers: int = 1,
    tool_steps_only: bool = False,
) -> EvaluationResult:
    """Run every task and fold the per-task records into suite metrics.

    The backend is created once per evaluation; scripted backends force
    serial execution because their cursor is stateful.
    """
    ledger = ledger if ledger is not None else ExperienceLedger()
    backend = backend_factory()
    if workers > 1 and not backend.supports_concurrency:
        logger.warning("backend does not support concurrency; running serially")
        workers = 1

    def run_one(task: TaskInstance) -> tuple[RunResult, float]:
        start = time.perf_counter()
        result = run_task(task, memory, ledger, cfg, env, backend)
        return result, time.perf_counter() - start

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_one, suite))
    else:
        outcomes = [run_one(task) for task in suite]

    records = [
        _record_from_run(task, result, runtime)
        for task, (result, runtime) in zip(suite, outcomes)
    ]
    trajectories = [
        trajectory_to_dict(result.trajectory) for result, _ in outcomes
    ]
    return EvaluationResult(
        metrics=metrics_from_records(records, tool_steps_only=tool_steps_only),
        records=records,
        trajectories=trajectories,
    )


def write_run_outputs(out_dir: str | Path, result: EvaluationResult) -> dict[str, str]:
    """Write trajectories.jsonl (deterministic), records.jsonl, metrics.json;
    returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "trajectories": str(out_dir / "trajectories.jsonl"),
        "records": str(out_dir / "records.jsonl"),
        "metrics": str(out_dir / "metrics.json"),
    }
    with open(paths["trajectories"], "w", encoding="utf-8") as handle:
        for traj in result.trajectories:
            handle.write(json.dumps(traj, ensure_ascii=True) + "\n")
    with open(paths["records"], "w", encoding="utf-8") as handle:
        for record in result.records:
            handle.write(json.dumps(record.to_dict(), ensure_ascii=True) + "\n")
    Path(paths["metrics"]).write_text(
        json.dumps(result.metrics.to_dict(), indent=2), encoding="utf-8"
    )
    return paths


def load_records(path: str | Path) -> list[TaskRecord]:
    records = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FormatError(f"cannot read records {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(TaskRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise FormatError(f"{path} line {lineno}: {exc}") from exc
    return records


# --- sweeps -------------------------------------------------------------------


def load_manifest(run_dir: str | Path) -> list[dict]:
    path = Path(run_dir) / "manifest.json"
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    if payload.get("version") != 1:
        raise FormatError(f"manifest {path}: unsupported version")
    return payload.get("checkpoints", [])


def sweep_optimization_steps(
    suite: Sequence[TaskInstance],
    run_dir: str | Path,
    cfg: AgentConfig,
    env: ToolEnv,
    backend_factory: Callable[[], Backend],
    tool_steps_only: bool = False,
) -> list[dict]:
    """Evaluate the suite against every checkpoint the optimizer recorded.

    Checkpoints are read-only; a missing file skips that row with a warning.
    Returns one row per checkpoint: {"checkpoint": step, **metrics}.
    """
    run_dir = Path(run_dir)
    rows: list[dict] = []
    for checkpoint in load_manifest(run_dir):
        memory_path = run_dir / checkpoint["memory"]
        ledger_path = run_dir / checkpoint["ledger"]
        if not memory_path.exists() or not ledger_path.exists():
            logger.warning("skipping missing checkpoint %s", checkpoint.get("step"))
            continue
        memory = MemoryStore.load(memory_path)
        ledger = ExperienceLedger.load(ledger_path)
        result = evaluate(
            suite,
            cfg,
            env,
            backend_factory,
            memory=memory,
            ledger=ledger,
            tool_steps_only=tool_steps_only,
        )
        rows.append({"checkpoint": checkpoint["step"], **result.metrics.to_dict()})
    return rows


_SWEEP_MODES = (VerifierMode.ITERATIVE_REFINEMENT, VerifierMode.CANDIDATE_SELECTION)


def sweep_verification_size(
    suite: Sequence[TaskInstance],
    n_values: Sequence[int],
    cfg: AgentConfig,
    env: ToolEnv,
    backend_factory: Callable[[], Backend],
    memory: MemoryStore | None = None,
    ledger: ExperienceLedger | None = None,
    tool_steps_only: bool = False,
) -> list[dict]:
    """Evaluate both verification methods for each size n.

    Returns one row per (mode, n): {"mode": ..., "n": ..., **metrics}.
    """
    rows: list[dict] = []
    for mode in _SWEEP_MODES:
        for n in n_values:
            run_cfg = AgentConfig(
                max_steps=cfg.max_steps,
                demo_k=cfg.demo_k,
                verifier=VerifierConfig(mode=mode, n=n),
                prompt_budget_chars=cfg.prompt_budget_chars,
            )
            result = evaluate(
                suite,
                run_cfg,
                env,
                backend_factory,
                memory=memory,
                ledger=ledger,
                tool_steps_only=tool_steps_only,
            )
            rows.append({"mode": mode.value, "n": n, **result.metrics.to_dict()})
    return rows


# --- reports ------------------------------------------------------------------


def render_report(rows: list[dict], fmt: str, columns: Sequence[str] | None = None) -> str:
    """Deterministic serialization with a stable column order."""
    if columns is None:
        columns = list(rows[0]) if rows else list(METRIC_FIELDS)
    if fmt == "json":
        return json.dumps([{col: row.get(col) for col in columns} for row in rows], indent=2)
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({col: row.get(col) for col in columns})
        return buffer.getvalue()
    raise ValueError(f"unknown report format {fmt!r}")


def emit_report(
    rows: list[dict], fmt: str, path: str | Path, columns: Sequence[str] | None = None
) -> None:
    Path(path).write_text(render_report(rows, fmt, columns), encoding="utf-8")
