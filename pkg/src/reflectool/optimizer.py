"""Optimization stage: attempt each training task, reflect on a failure,
retry once with the suggestion, and on a successful retry store the
trajectory in long-term memory and fold action-wise suggestions into the
per-tool experience ledger."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

from reflectool.agent import AgentConfig, run_task
from reflectool.backend import Backend, GenerationRequest
from reflectool.errors import BackendError
from reflectool.experience import ExperienceLedger, derive_suggestions
from reflectool.memory import MemoryStore
from reflectool.model import Outcome, TaskInstance, Trajectory
from reflectool.prompts import reflect_prompt, retry_extra
from reflectool.toolbox.registry import ToolEnv

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReflectionSuggestion:
    text: str


@dataclass
class OptimizationReport:
    task_id: str
    c1: Trajectory
    s: ReflectionSuggestion | None
    c2: Trajectory | None
    memory_added: bool
    suggestions_merged: int


def attempt(task: TaskInstance, env: ToolEnv, backend: Backend, max_steps: int) -> Trajectory:
    """Plain agent loop: no memory, no verifier, catalog plus the one-shot
    format demonstration."""
    cfg = AgentConfig(max_steps=max_steps, demo_k=0)
    return run_task(task, None, ExperienceLedger(), cfg, env, backend).trajectory


def reflect(task: TaskInstance, c1: Trajectory, backend: Backend) -> ReflectionSuggestion:
    """One backend call comparing the attempt with the expected answer."""
    system, user = reflect_prompt(task, c1)
    reply = backend.generate(
        GenerationRequest(system_prompt=system, user_prompt=user, role="reflect")
    )
    return ReflectionSuggestion(reply.strip())


def retry_with_suggestion(
    task: TaskInstance,
    c1: Trajectory,
    s: ReflectionSuggestion,
    env: ToolEnv,
    backend: Backend,
    max_steps: int,
) -> Trajectory:
    """Re-run the plain loop with the failed transcript and the suggestion
    injected into the system prompt."""
    cfg = AgentConfig(max_steps=max_steps, demo_k=0)
    extra = retry_extra(c1, s.text)
    return run_task(
        task, None, ExperienceLedger(), cfg, env, backend, system_extra=extra
    ).trajectory


def optimize_task(
    task: TaskInstance,
    memory: MemoryStore,
    ledger: ExperienceLedger,
    env: ToolEnv,
    backend: Backend,
    max_steps: int = 10,
    always_reflect: bool = False,
) -> OptimizationReport:
    """One optimization step. Memory and ledger are updated only when the
    final trajectory succeeds; the ledger only when there is a failed/success
    pair to compare.

    A first-try success is stored directly and skips reflection (no
    comparison is possible, so no suggestions are derived); pass
    ``always_reflect=True`` to reflect and retry unconditionally.
    """
    c1 = attempt(task, env, backend, max_steps)
    if c1.outcome is Outcome.SUCCESS and not always_reflect:
        added = memory.add_if_success(task, c1)
        return OptimizationReport(task.id, c1, None, None, added, 0)

    try:
        s = reflect(task, c1, backend)
    except BackendError as exc:
        logger.warning("reflection failed for task %s: %s", task.id, exc)
        return OptimizationReport(task.id, c1, None, None, False, 0)

    c2 = retry_with_suggestion(task, c1, s, env, backend, max_steps)
    merged = 0
    added = memory.add_if_success(task, c2)
    if added:
        try:
            suggestions = derive_suggestions(task, c1, c2, backend, env.registry.names())
        except BackendError as exc:
            logger.warning("suggestion derivation failed for task %s: %s", task.id, exc)
            suggestions = []
        merged = ledger.merge(suggestions, backend)
    return OptimizationReport(task.id, c1, s, c2, added, merged)


def checkpoint_name(kind: str, step: int) -> str:
    return f"{kind}-{step}.json"


def _write_checkpoint(
    out_dir: Path, step: int, memory: MemoryStore, ledger: ExperienceLedger
) -> dict:
    memory_file = checkpoint_name("memory", step)
    ledger_file = checkpoint_name("ledger", step)
    memory.save(out_dir / memory_file)
    ledger.save(out_dir / ledger_file)
    return {"step": step, "memory": memory_file, "ledger": ledger_file}


def optimize_suite(
    tasks: list[TaskInstance],
    memory: MemoryStore,
    ledger: ExperienceLedger,
    env: ToolEnv,
    backend: Backend,
    out_dir: str | Path,
    checkpoint_every: int = 5,
    max_steps: int = 10,
    always_reflect: bool = False,
) -> list[OptimizationReport]:
    """Process tasks sequentially (ledger merges are order-dependent),
    checkpointing memory and ledger every ``checkpoint_every`` tasks.

    Checkpoint 0 is written up front as the empty-memory baseline; a final
    checkpoint is always written. A checkpoint IOError aborts the run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoints = [_write_checkpoint(out_dir, 0, memory, ledger)]
    reports: list[OptimizationReport] = []
    for i, task in enumerate(tasks, start=1):
        reports.append(
            optimize_task(
                task,
                memory,
                ledger,
                env,
                backend,
                max_steps=max_steps,
                always_reflect=always_reflect,
            )
        )
        if checkpoint_every > 0 and i % checkpoint_every == 0:
            checkpoints.append(_write_checkpoint(out_dir, i, memory, ledger))
    if not checkpoints or checkpoints[-1]["step"] != len(tasks):
        checkpoints.append(_write_checkpoint(out_dir, len(tasks), memory, ledger))
    manifest = {"version": 1, "checkpoints": checkpoints}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return reports
