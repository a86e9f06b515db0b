"""Per-step action verification: iterative refinement and candidate selection.

Iterative refinement repeatedly rewrites the proposed action, stopping early
when a rewrite matches its predecessor. Candidate selection presents a
sampled list and asks the verifier to pick one by number; the returned action
is always a member of the list, falling back to the first candidate when the
reply cannot be used.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum

from reflectool.backend import Backend, GenerationRequest
from reflectool.errors import BackendError, ParseError
from reflectool.experience import ExperienceLedger
from reflectool.model import ActionInvocation, TaskInstance, parse_action, render_canonical
from reflectool.prompts import (
    VERIFY_REFINE_SYSTEM,
    VERIFY_REFINE_USER,
    VERIFY_SELECT_SYSTEM,
    VERIFY_SELECT_USER,
    render_attachments,
)

logger = logging.getLogger(__name__)

_INDEX = re.compile(r"\d+")


class VerifierMode(str, Enum):
    NONE = "none"
    ITERATIVE_REFINEMENT = "iterative_refinement"
    CANDIDATE_SELECTION = "candidate_selection"


@dataclass(frozen=True)
class VerifierConfig:
    """``n`` is the max refinement steps or the candidate-list size."""

    mode: VerifierMode = VerifierMode.NONE
    n: int = 1

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("verification size n must be >= 1")


@dataclass(frozen=True)
class VerifyContext:
    """Everything the verifier prompt conditions on besides the actions."""

    task: TaskInstance
    transcript: str
    demos_block: str
    catalog: str


@dataclass(frozen=True)
class SelectionResult:
    action: ActionInvocation
    fallback: bool = False


def canonical_params(inv: ActionInvocation) -> tuple[tuple[str, str], ...]:
    """Keys sorted, values whitespace-collapsed, case preserved."""
    return tuple(sorted((k, " ".join(v.split())) for k, v in inv.params))


def actions_equal(a: ActionInvocation, b: ActionInvocation) -> bool:
    return a.action_name == b.action_name and canonical_params(a) == canonical_params(b)


def _demos(ctx: VerifyContext) -> str:
    return f"{ctx.demos_block}\n" if ctx.demos_block else ""


def iterative_refine(
    ctx: VerifyContext,
    a0: ActionInvocation,
    n: int,
    ledger: ExperienceLedger,
    backend: Backend,
) -> ActionInvocation:
    """Refine ``a0`` up to ``n`` times; at most ``n`` verifier calls.

    Each round sees the full refinement history and the experience entries
    for every action named in it. An unparseable reply or backend failure at
    round j degrades to the last good action a^{j-1}.
    """
    history = [a0]
    system = VERIFY_REFINE_SYSTEM.format(catalog=ctx.catalog)
    for _ in range(n):
        experience = ledger.lookup(inv.action_name for inv in history)
        user = VERIFY_REFINE_USER.format(
            attachments=render_attachments(ctx.task),
            instruction=ctx.task.instruction,
            demos=_demos(ctx),
            transcript=ctx.transcript or "(no steps yet)",
            history="\n".join(render_canonical(inv) for inv in history),
            experience=f"Per-tool experience:\n{experience}\n" if experience else "",
        )
        try:
            reply = backend.generate(
                GenerationRequest(system_prompt=system, user_prompt=user, role="verify")
            )
        except BackendError as exc:
            logger.warning("refinement degraded to previous action: %s", exc)
            return history[-1]
        try:
            refined = parse_action(reply)
        except ParseError as exc:
            logger.warning("unparseable refinement reply, keeping previous: %s", exc)
            return history[-1]
        if actions_equal(refined, history[-1]):
            return refined
        history.append(refined)
    return history[-1]


def candidate_select(
    ctx: VerifyContext,
    candidates: list[ActionInvocation],
    ledger: ExperienceLedger,
    backend: Backend,
) -> SelectionResult:
    """One verifier call choosing among the candidates by index.

    Duplicates are collapsed for display; the chosen index maps back to the
    first original it stands for. The result is always a member of
    ``candidates``.
    """
    if not candidates:
        raise ValueError("candidate list must be non-empty")
    if len(candidates) == 1:
        return SelectionResult(candidates[0])
    display: list[ActionInvocation] = []
    for candidate in candidates:
        if not any(actions_equal(candidate, seen) for seen in display):
            display.append(candidate)
    experience = ledger.lookup(inv.action_name for inv in candidates)
    user = VERIFY_SELECT_USER.format(
        attachments=render_attachments(ctx.task),
        instruction=ctx.task.instruction,
        demos=_demos(ctx),
        transcript=ctx.transcript or "(no steps yet)",
        candidates="\n".join(
            f"{i}. {render_canonical(inv)}" for i, inv in enumerate(display, start=1)
        ),
        experience=f"Per-tool experience:\n{experience}\n" if experience else "",
    )
    try:
        reply = backend.generate(
            GenerationRequest(
                system_prompt=VERIFY_SELECT_SYSTEM.format(catalog=ctx.catalog),
                user_prompt=user,
                role="verify",
            )
        )
    except BackendError as exc:
        logger.warning("selection degraded to first candidate: %s", exc)
        return SelectionResult(candidates[0], fallback=True)
    match = _INDEX.search(reply)
    if match is None:
        return SelectionResult(candidates[0], fallback=True)
    index = int(match.group(0))
    if not 1 <= index <= len(display):
        return SelectionResult(candidates[0], fallback=True)
    return SelectionResult(display[index - 1])
