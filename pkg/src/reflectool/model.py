"""Core domain types: tasks, actions, observations, trajectories, matchers.

Everything here is an immutable value after construction and safe to share
across concurrent task runs.

The action grammar is a fixed single-line form::

    Action: <Name>[<key>=<value>; <key>=<value>; ...]

A payload that does not start with ``key=`` is kept whole under the key
``input``. Values may span lines as long as the square brackets balance.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

from reflectool.errors import MatchError, ParseError


class ToolCategory(str, Enum):
    INNER = "inner"
    KNOWLEDGE = "knowledge"
    MULTIMODAL = "multimodal"
    NUMERICAL = "numerical"
    DATA = "data"


class Modality(str, Enum):
    """Input modality a tool needs from the task attachments."""

    NONE = "none"
    IMAGE = "image"
    TABLE_STORE = "table_store"
    DOCUMENT_FILES = "document_files"


class ObservationStatus(str, Enum):
    OK = "ok"
    TOOL_ERROR = "tool_error"
    SELECTION_ERROR = "selection_error"


class Outcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    BUDGET_EXHAUSTED = "budget_exhausted"
    ABORTED = "aborted"


class MatcherKind(str, Enum):
    EXACT = "exact"
    CHOICE_LETTER = "choice_letter"
    NUMERIC = "numeric"
    SET_F1 = "set_f1"


INNER_ACTIONS = ("Plan", "Think", "Finish")
FINISH = "Finish"


@dataclass(frozen=True)
class ToolDescriptor:
    """Catalog entry for one action: its name, one-line usage text, and the
    input modalities it needs from the task attachments."""

    name: str
    description: str
    category: ToolCategory
    required_modalities: frozenset[Modality] = frozenset({Modality.NONE})


@dataclass(frozen=True)
class ActionInvocation:
    """One parsed agent action. ``raw_text`` keeps the full backend emission
    (including any free-text thought) and is excluded from equality."""

    action_name: str
    params: tuple[tuple[str, str], ...]
    raw_text: str = field(compare=False, default="")

    def param(self, key: str, default: str = "") -> str:
        for k, v in self.params:
            if k == key:
                return v
        return default

    def sole_input(self) -> str:
        """The conventional single payload: the ``input`` param, or the only
        value when exactly one param is present."""
        value = self.param("input")
        if value:
            return value
        if len(self.params) == 1:
            return self.params[0][1]
        return ""


@dataclass(frozen=True)
class Observation:
    text: str
    status: ObservationStatus = ObservationStatus.OK


@dataclass(frozen=True)
class Step:
    invocation: ActionInvocation
    observation: Observation


@dataclass(frozen=True)
class Trajectory:
    """Ordered action/observation history for one task attempt.

    ``final_answer`` is present iff a Finish step was taken; a Finish step,
    when present, is the last step.
    """

    task_id: str
    steps: tuple[Step, ...] = ()
    final_answer: str | None = None
    outcome: Outcome = Outcome.FAILURE

    def action_names(self) -> list[str]:
        """Distinct action names in step order."""
        seen: list[str] = []
        for step in self.steps:
            name = step.invocation.action_name
            if name not in seen:
                seen.append(name)
        return seen


@dataclass(frozen=True)
class Attachments:
    """Typed task inputs beyond the instruction text."""

    context_text: str | None = None
    table_store_ref: str | None = None
    document_files: tuple[str, ...] = ()
    image_refs: tuple[str, ...] = ()


@dataclass(frozen=True)
class Matcher:
    kind: MatcherKind
    tol: float = 0.0
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.kind is MatcherKind.NUMERIC and self.tol < 0:
            raise ValueError("numeric matcher requires a non-negative tolerance")


@dataclass(frozen=True)
class TaskInstance:
    id: str
    instruction: str
    attachments: Attachments = Attachments()
    gold: str = ""
    matcher: Matcher = Matcher(MatcherKind.EXACT)


@dataclass(frozen=True)
class AnswerCheck:
    """Outcome flag for a finished trajectory: the prediction and whether it
    matched the gold answer."""

    matched: bool
    predicted: str


# --- action grammar ---------------------------------------------------------

_ACTION_LINE = re.compile(r"^[ \t]*Action:\s*", re.MULTILINE)
_KEY_EQ = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\s*=")


def parse_action(raw: str) -> ActionInvocation:
    """Extract the first ``Action: Name[payload]`` from a backend reply.

    Raises ParseError when there is no Action line, the name is empty, or
    the brackets do not balance.
    """
    if not raw or not raw.strip():
        raise ParseError("empty backend reply")
    match = _ACTION_LINE.search(raw)
    if match is None:
        raise ParseError("no 'Action:' line in reply")
    rest = raw[match.end():]
    open_at = rest.find("[")
    if open_at == -1:
        raise ParseError("action has no parameter bracket")
    name = rest[:open_at].strip()
    if not name:
        raise ParseError("empty action name")
    if "\n" in name:
        raise ParseError("parameter bracket must open on the Action line")
    payload, _ = _read_bracketed(rest, open_at)
    return ActionInvocation(name, _parse_payload(payload), raw_text=raw)


def _read_bracketed(text: str, open_at: int) -> tuple[str, int]:
    """Return the payload between balanced brackets starting at ``open_at``
    and the index just past the closing bracket."""
    depth = 0
    for i in range(open_at, len(text)):
        ch = text[i]
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth == 0:
                return text[open_at + 1 : i], i + 1
    raise ParseError("unbalanced brackets in action payload")


def _parse_payload(payload: str) -> tuple[tuple[str, str], ...]:
    payload = payload.strip()
    if not payload:
        return ()
    if not _KEY_EQ.match(payload):
        return (("input", payload),)
    pairs: list[tuple[str, str]] = []
    for item in _split_top_level(payload):
        key, _, value = item.partition("=")
        pairs.append((key.strip(), value.strip()))
    return tuple(pairs)


def _split_top_level(payload: str) -> list[str]:
    """Split on top-level ``;`` only where a new ``key=`` follows, so values
    may contain semicolons and nested brackets."""
    items: list[str] = []
    depth = 0
    start = 0
    i = 0
    while i < len(payload):
        ch = payload[i]
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth = max(0, depth - 1)
        elif ch == ";" and depth == 0:
            rest = payload[i + 1 :].lstrip()
            if _KEY_EQ.match(rest):
                items.append(payload[start:i])
                start = i + 1
        i += 1
    items.append(payload[start:])
    return items


def render_canonical(inv: ActionInvocation) -> str:
    """Deterministic single-line rendering; parse(render_canonical(a)) == a."""
    payload = "; ".join(f"{k}={v}" for k, v in inv.params)
    return f"Action: {inv.action_name}[{payload}]"


def render_steps(steps: tuple[Step, ...] | list[Step], include_plan: bool = True) -> str:
    lines: list[str] = []
    for step in steps:
        if not include_plan and step.invocation.action_name == "Plan":
            continue
        lines.append(render_canonical(step.invocation))
        lines.append(f"Observation: {step.observation.text}")
    return "\n".join(lines)


def render_transcript(traj: Trajectory, include_plan: bool = True) -> str:
    """One ``Action:``/``Observation:`` pair per step, byte-identical for
    identical input."""
    return render_steps(traj.steps, include_plan=include_plan)


# --- answer matching --------------------------------------------------------

_CHOICE = re.compile(r"\b([A-Ea-e])\b")
_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


def _collapse(text: str) -> str:
    return " ".join(text.split()).casefold()


def _first_choice_letter(text: str) -> str | None:
    match = _CHOICE.search(text)
    return match.group(1).upper() if match else None


def _parse_number(text: str) -> float:
    try:
        return float(text.strip())
    except ValueError:
        pass
    match = _NUMBER.search(text)
    if match is None:
        raise MatchError(f"no numeric value in {text!r}")
    return float(match.group(0))


def _token_set(text: str) -> set[str]:
    return set(re.findall(r"[^\W_]+", text.lower(), re.UNICODE))


def match_answer(pred: str, gold: str, matcher: Matcher) -> bool:
    """Compare a prediction against the gold answer under the task's matcher.

    exact: case-insensitive, whitespace-collapsed equality.
    choice_letter: first standalone A-E letter of each side.
    numeric: |a - b| <= tol after parsing decimals (MatchError if unparseable).
    set_f1: token-set F1 >= threshold.
    """
    if matcher.kind is MatcherKind.EXACT:
        return _collapse(pred) == _collapse(gold)
    if matcher.kind is MatcherKind.CHOICE_LETTER:
        a, b = _first_choice_letter(pred), _first_choice_letter(gold)
        return a is not None and a == b
    if matcher.kind is MatcherKind.NUMERIC:
        return abs(_parse_number(pred) - _parse_number(gold)) <= matcher.tol
    if matcher.kind is MatcherKind.SET_F1:
        p, g = _token_set(pred), _token_set(gold)
        if not p and not g:
            return True
        if not p or not g:
            return False
        overlap = len(p & g)
        if overlap == 0:
            return False
        precision = overlap / len(p)
        recall = overlap / len(g)
        f1 = 2 * precision * recall / (precision + recall)
        return f1 >= matcher.threshold
    raise MatchError(f"unknown matcher kind {matcher.kind!r}")


def judge(predicted: str, task: TaskInstance) -> AnswerCheck:
    """Apply the task matcher; an unparseable prediction counts as a miss."""
    try:
        return AnswerCheck(match_answer(predicted, task.gold, task.matcher), predicted)
    except MatchError:
        return AnswerCheck(False, predicted)


# --- serialization ----------------------------------------------------------
#
# JSON schemas shared by the task-suite JSONL files, the memory store, and
# the trajectory records the harness writes.


def task_to_dict(task: TaskInstance) -> dict:
    matcher: dict = {"kind": task.matcher.kind.value}
    if task.matcher.kind is MatcherKind.NUMERIC:
        matcher["tol"] = task.matcher.tol
    if task.matcher.kind is MatcherKind.SET_F1:
        matcher["threshold"] = task.matcher.threshold
    return {
        "id": task.id,
        "instruction": task.instruction,
        "attachments": {
            "context_text": task.attachments.context_text,
            "table_store": task.attachments.table_store_ref,
            "files": list(task.attachments.document_files),
            "images": list(task.attachments.image_refs),
        },
        "gold": task.gold,
        "matcher": matcher,
    }


def task_from_dict(data: dict) -> TaskInstance:
    try:
        raw_attachments = data.get("attachments") or {}
        raw_matcher = data.get("matcher") or {"kind": "exact"}
        matcher = Matcher(
            kind=MatcherKind(raw_matcher["kind"]),
            tol=float(raw_matcher.get("tol", 0.0)),
            threshold=float(raw_matcher.get("threshold", 0.5)),
        )
        return TaskInstance(
            id=str(data["id"]),
            instruction=str(data["instruction"]),
            attachments=Attachments(
                context_text=raw_attachments.get("context_text"),
                table_store_ref=raw_attachments.get("table_store"),
                document_files=tuple(raw_attachments.get("files") or ()),
                image_refs=tuple(raw_attachments.get("images") or ()),
            ),
            gold=str(data.get("gold", "")),
            matcher=matcher,
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"bad task record: {exc}") from exc


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "task_id": traj.task_id,
        "steps": [
            {
                "action": {
                    "name": step.invocation.action_name,
                    "params": [[k, v] for k, v in step.invocation.params],
                    "raw": step.invocation.raw_text,
                },
                "observation": {
                    "text": step.observation.text,
                    "status": step.observation.status.value,
                },
            }
            for step in traj.steps
        ],
        "final_answer": traj.final_answer,
        "outcome": traj.outcome.value,
    }


def trajectory_from_dict(data: dict) -> Trajectory:
    try:
        steps = tuple(
            Step(
                invocation=ActionInvocation(
                    action_name=raw["action"]["name"],
                    params=tuple((k, v) for k, v in raw["action"]["params"]),
                    raw_text=raw["action"].get("raw", ""),
                ),
                observation=Observation(
                    text=raw["observation"]["text"],
                    status=ObservationStatus(raw["observation"]["status"]),
                ),
            )
            for raw in data["steps"]
        )
        return Trajectory(
            task_id=data["task_id"],
            steps=steps,
            final_answer=data.get("final_answer"),
            outcome=Outcome(data["outcome"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"bad trajectory record: {exc}") from exc
