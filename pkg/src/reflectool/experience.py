"""Per-tool experience: action-wise suggestions derived by comparing a failed
and a successful trajectory, consolidated into one capped note per tool."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from reflectool.backend import Backend, GenerationRequest
from reflectool.errors import BackendError, FormatError
from reflectool.model import TaskInstance, Trajectory
from reflectool.prompts import merge_prompt, suggestion_prompt

logger = logging.getLogger(__name__)

EXPERIENCE_CHAR_CAP = 1200
LEDGER_VERSION = 1

_SUGGESTION_LINE = re.compile(r"^\s*-?\s*([A-Za-z_][A-Za-z0-9_]*)\s*:\s*(\S.*)$")
_FENCE = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class ActionSuggestion:
    action_name: str
    suggestion: str


@dataclass
class ToolExperience:
    text: str = ""
    update_count: int = 0


class ExperienceLedger:
    """One experience entry per registered action, inner actions included.

    Writes happen only during the optimization stage; the inference stage
    reads an immutable snapshot.
    """

    def __init__(self, action_names: Iterable[str] = ()):
        self.entries: dict[str, ToolExperience] = {
            name: ToolExperience() for name in action_names
        }

    def lookup(self, action_names: Iterable[str]) -> str:
        """Labeled experience block for the distinct given names, in ledger
        order; empty texts omitted."""
        wanted = set(action_names)
        lines = [
            f"- {name}: {entry.text}"
            for name, entry in self.entries.items()
            if name in wanted and entry.text
        ]
        return "\n".join(lines)

    def merge(self, suggestions: list[ActionSuggestion], backend: Backend) -> int:
        """Fold suggestions into the per-tool notes, one at a time.

        An empty existing note takes the suggestion verbatim without a
        backend call; otherwise the backend rewrites {existing, new} into one
        consolidated note. A backend failure leaves that entry unchanged.
        Returns the number of suggestions merged.
        """
        merged = 0
        for suggestion in suggestions:
            entry = self.entries.get(suggestion.action_name)
            if entry is None:
                logger.warning(
                    "dropping suggestion for unregistered action %r",
                    suggestion.action_name,
                )
                continue
            if not entry.text:
                entry.text = suggestion.suggestion[:EXPERIENCE_CHAR_CAP]
                entry.update_count += 1
                merged += 1
                continue
            try:
                reply = backend.generate(
                    GenerationRequest(
                        system_prompt=merge_prompt(EXPERIENCE_CHAR_CAP),
                        user_prompt=(
                            f"Current note for {suggestion.action_name}:\n{entry.text}\n\n"
                            f"New suggestion:\n{suggestion.suggestion}"
                        ),
                        role="merge",
                    )
                )
            except BackendError as exc:
                logger.warning(
                    "merge failed for %s, keeping existing note: %s",
                    suggestion.action_name,
                    exc,
                )
                continue
            entry.text = reply.strip()[:EXPERIENCE_CHAR_CAP]
            entry.update_count += 1
            merged += 1
        return merged

    # --- persistence ---------------------------------------------------

    def save(self, path: str | Path) -> None:
        payload = {
            "version": LEDGER_VERSION,
            "entries": {
                name: {"text": entry.text, "count": entry.update_count}
                for name, entry in self.entries.items()
            },
        }
        Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ExperienceLedger":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read ledger {path}: {exc}") from exc
        if not isinstance(payload, dict) or payload.get("version") != LEDGER_VERSION:
            raise FormatError(
                f"ledger {path}: unsupported version {payload.get('version')!r}"
            )
        ledger = cls()
        for name, raw in payload.get("entries", {}).items():
            ledger.entries[name] = ToolExperience(
                text=str(raw.get("text", "")), update_count=int(raw.get("count", 0))
            )
        return ledger


def _parse_suggestion_lines(reply: str) -> list[tuple[str, str]]:
    fenced = _FENCE.search(reply)
    body = fenced.group(1) if fenced else reply
    parsed = []
    for line in body.splitlines():
        match = _SUGGESTION_LINE.match(line)
        if match:
            parsed.append((match.group(1), match.group(2).strip()))
    return parsed


def derive_suggestions(
    task: TaskInstance,
    c1: Trajectory,
    c2: Trajectory,
    backend: Backend,
    known_actions: Iterable[str],
    max_attempts: int = 3,
) -> list[ActionSuggestion]:
    """Ask the backend to compare how each action was used across the failed
    and the successful trajectory, one ``Name: suggestion`` line per action.

    Lines naming actions that are unregistered, or that appear in neither
    trajectory, are dropped with a warning. A reply with no parseable line at
    all is re-prompted up to twice; after that the derivation yields nothing
    and optimization continues.
    """
    known = set(known_actions)
    in_trajectories = set(c1.action_names()) | set(c2.action_names())
    system, user = suggestion_prompt(task, c1, c2)
    for attempt in range(max_attempts):
        try:
            reply = backend.generate(
                GenerationRequest(system_prompt=system, user_prompt=user, role="suggest")
            )
        except BackendError as exc:
            logger.warning("suggestion derivation aborted: %s", exc)
            return []
        lines = _parse_suggestion_lines(reply)
        if not lines:
            logger.warning(
                "unparseable suggestion reply (attempt %d/%d)", attempt + 1, max_attempts
            )
            continue
        suggestions = []
        for name, text in lines:
            if name not in known:
                logger.warning("dropping suggestion for unknown action %r", name)
                continue
            if name not in in_trajectories:
                logger.warning(
                    "dropping suggestion for %r: not used in either trajectory", name
                )
                continue
            suggestions.append(ActionSuggestion(name, text))
        return suggestions
    return []
