"""Inference-stage agent loop: retrieve demonstrations once per task, then
propose, verify, gate, and execute one action per step until Finish or the
step budget runs out."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from reflectool.backend import (
    CANDIDATE_TEMPERATURE,
    Backend,
    GenerationRequest,
)
from reflectool.errors import BackendError, ParseError
from reflectool.memory import MemoryEntry, MemoryStore
from reflectool.model import (
    FINISH,
    ActionInvocation,
    Observation,
    ObservationStatus,
    Outcome,
    Step,
    TaskInstance,
    Trajectory,
    judge,
    parse_action,
    render_steps,
    render_transcript,
)
from reflectool.experience import ExperienceLedger
from reflectool.prompts import policy_system, policy_user
from reflectool.toolbox.registry import ToolContext, ToolEnv, invoke, validate_invocation
from reflectool.verifier import (
    VerifierConfig,
    VerifierMode,
    VerifyContext,
    candidate_select,
    iterative_refine,
)

logger = logging.getLogger(__name__)

POLICY_PARSE_ATTEMPTS = 3


@dataclass(frozen=True)
class AgentConfig:
    max_steps: int = 10
    demo_k: int = 2
    verifier: VerifierConfig = field(default_factory=VerifierConfig)
    prompt_budget_chars: int = 12000

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.demo_k < 0:
            raise ValueError("demo_k must be >= 0")


@dataclass
class RunResult:
    trajectory: Trajectory
    verifier_fallbacks: int = 0


class PolicyParseExhausted(ParseError):
    """The policy produced no parseable action after repeated attempts."""


def render_demos(demos: list[MemoryEntry], budget_chars: int) -> str:
    """Render retrieved demonstrations, dropping oldest steps first (from the
    least similar demo backwards) until the block fits the budget."""
    if not demos:
        return ""
    kept = [list(entry.trajectory.steps) for entry in demos]
    dropped = [0] * len(demos)

    def block() -> str:
        parts = ["Similar solved tasks:"]
        for entry, steps, n_dropped in zip(demos, kept, dropped):
            lines = [f"Example task: {entry.task.instruction}"]
            if n_dropped:
                lines.append(f"[{n_dropped} earlier steps omitted]")
            transcript = render_steps(steps)
            if transcript:
                lines.append(transcript)
            lines.append(f"Final answer: {entry.trajectory.final_answer or ''}")
            parts.append("\n".join(lines))
        return "\n\n".join(parts)

    text = block()
    while len(text) > budget_chars:
        for i in range(len(kept) - 1, -1, -1):
            if kept[i]:
                del kept[i][0]
                dropped[i] += 1
                break
        else:
            break  # nothing left to drop; hand back the headers as-is
        text = block()
    return text


def next_action(
    task: TaskInstance,
    steps: list[Step],
    demos_block: str,
    ledger: ExperienceLedger,
    cfg: AgentConfig,
    env: ToolEnv,
    backend: Backend,
    system_extra: str = "",
) -> tuple[ActionInvocation, bool]:
    """Propose and verify the next action.

    Returns (action, verifier_fallback_flag). Raises PolicyParseExhausted
    when the policy emits nothing parseable in POLICY_PARSE_ATTEMPTS tries,
    and lets BackendError propagate to the caller. ``system_extra`` appends
    retry guidance to the policy system prompt.
    """
    catalog = env.registry.catalog_text()
    transcript = render_steps(steps)
    system = policy_system(catalog) + system_extra
    user = policy_user(task, demos_block, transcript)
    mode = cfg.verifier.mode

    if mode is VerifierMode.CANDIDATE_SELECTION and cfg.verifier.n > 1:
        candidates: list[ActionInvocation] = []
        for _ in range(POLICY_PARSE_ATTEMPTS):
            texts = backend.sample(
                GenerationRequest(
                    system_prompt=system,
                    user_prompt=user,
                    role="policy",
                    temperature=CANDIDATE_TEMPERATURE,
                    n_samples=cfg.verifier.n,
                ),
                cfg.verifier.n,
            )
            for text in texts:
                try:
                    candidates.append(parse_action(text))
                except ParseError:
                    logger.debug("skipping unparseable candidate")
            if candidates:
                break
        if not candidates:
            raise PolicyParseExhausted("no parseable candidate action")
        ctx = VerifyContext(task, transcript, demos_block, catalog)
        result = candidate_select(ctx, candidates, ledger, backend)
        return result.action, result.fallback

    base: ActionInvocation | None = None
    for _ in range(POLICY_PARSE_ATTEMPTS):
        reply = backend.generate(
            GenerationRequest(system_prompt=system, user_prompt=user, role="policy")
        )
        try:
            base = parse_action(reply)
            break
        except ParseError:
            logger.debug("unparseable policy reply, re-prompting")
    if base is None:
        raise PolicyParseExhausted("no parseable policy action")
    if mode is VerifierMode.ITERATIVE_REFINEMENT:
        ctx = VerifyContext(task, transcript, demos_block, catalog)
        return iterative_refine(ctx, base, cfg.verifier.n, ledger, backend), False
    return base, False


def _forced_finish() -> Step:
    inv = ActionInvocation(FINISH, (("answer", ""),), raw_text="Action: Finish[answer=]")
    return Step(inv, Observation("Aborted: no parseable action from the policy."))


def _finish_answer(inv: ActionInvocation) -> str:
    answer = inv.param("answer")
    return answer if answer else inv.sole_input()


def run_task(
    task: TaskInstance,
    memory: MemoryStore | None,
    ledger: ExperienceLedger,
    cfg: AgentConfig,
    env: ToolEnv,
    backend: Backend,
    system_extra: str = "",
) -> RunResult:
    """Run one task to completion against immutable memory/ledger snapshots.

    Demonstrations are retrieved exactly once, before the loop. Selection
    errors are recorded on their step and the loop continues; only a backend
    failure aborts, preserving the trajectory up to that point.
    """
    demos = memory.retrieve(task.instruction, cfg.demo_k) if memory is not None else []
    demos_block = render_demos(demos, cfg.prompt_budget_chars)
    steps: list[Step] = []
    fallbacks = 0
    final_answer: str | None = None
    outcome: Outcome | None = None

    for _ in range(cfg.max_steps):
        try:
            inv, fallback = next_action(
                task, steps, demos_block, ledger, cfg, env, backend, system_extra
            )
        except PolicyParseExhausted:
            steps.append(_forced_finish())
            final_answer = ""
            outcome = Outcome.ABORTED
            break
        except BackendError as exc:
            logger.warning("task %s aborted: %s", task.id, exc)
            outcome = Outcome.ABORTED
            break
        fallbacks += int(fallback)
        gate_reason = validate_invocation(inv, task, env.registry)
        if gate_reason is not None:
            steps.append(
                Step(inv, Observation(gate_reason, ObservationStatus.SELECTION_ERROR))
            )
            continue
        if inv.action_name == FINISH:
            steps.append(Step(inv, invoke(inv, ToolContext(task, env, backend))))
            final_answer = _finish_answer(inv)
            outcome = (
                Outcome.SUCCESS if judge(final_answer, task).matched else Outcome.FAILURE
            )
            break
        steps.append(Step(inv, invoke(inv, ToolContext(task, env, backend))))

    if outcome is None:
        outcome = Outcome.BUDGET_EXHAUSTED
    trajectory = Trajectory(
        task_id=task.id,
        steps=tuple(steps),
        final_answer=final_answer,
        outcome=outcome,
    )
    return RunResult(trajectory=trajectory, verifier_fallbacks=fallbacks)


def demo_transcript(entry: MemoryEntry) -> str:
    """Convenience for tests and the service layer."""
    return render_transcript(entry.trajectory)
