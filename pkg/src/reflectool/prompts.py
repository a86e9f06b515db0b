"""Prompt templates for the policy, reflection, suggestion, merge, and
verifier calls. All builders are pure string functions so scripted runs stay
byte-reproducible."""

from __future__ import annotations

from reflectool.model import TaskInstance, Trajectory, render_transcript

POLICY_SYSTEM = """\
You are an agent that solves tasks step by step using the actions below.
At each turn reply with optional reasoning lines followed by exactly one line:

Action: <Name>[<key>=<value>; <key>=<value>]

Available actions:
{catalog}

{format_demo}"""

# One-shot demonstration of the action format, always included so the model
# knows the line grammar even with an empty memory.
FORMAT_DEMO = """\
Example of the expected format:
Task: What is 12 * 7?
Action: Plan[input=Use the calculator, then report the product.]
Observation: OK. Continue.
Action: Calculator[input=12*7]
Observation: 84
Action: Finish[answer=84]"""

POLICY_USER = """\
{attachments}Task: {instruction}
{demos}{transcript}What is your next action?"""

REFLECT_SYSTEM = """\
You review an agent's failed attempt at a task. Compare the attempt with the
expected answer and write one short, concrete suggestion that would let the
agent succeed on a retry. Reply with the suggestion only."""

REFLECT_USER = """\
{attachments}Task: {instruction}
Expected answer: {gold}

Attempt:
{transcript}"""

RETRY_EXTRA = """\

A previous attempt failed. Its transcript:
{transcript}

Guidance for this retry: {suggestion}"""

SUGGEST_SYSTEM = """\
You compare a failed attempt and a successful attempt at the same task.
For each action name that appears in either attempt, write one line of
advice about how that action should be used, formatted exactly as:

<ActionName>: <advice>

Write the lines inside a fenced code block. Cover only actions whose usage
differed or mattered; skip actions with nothing to say."""

SUGGEST_USER = """\
Task: {instruction}
Expected answer: {gold}

Failed attempt:
{c1}

Successful attempt:
{c2}"""

MERGE_SYSTEM = """\
You maintain a usage note for one tool. Rewrite the current note and the new
suggestion into a single consolidated note of at most {cap} characters.
Keep every distinct piece of advice; drop duplicates. Reply with the note
only."""

VERIFY_REFINE_SYSTEM = """\
You verify the next action an agent proposed for a task. Using the tool
catalog, the trajectory so far, and the accumulated per-tool experience,
reply with the action you would take instead — or repeat the proposed action
unchanged if it is already right. Reply with exactly one line:

Action: <Name>[<key>=<value>]

Available actions:
{catalog}"""

VERIFY_REFINE_USER = """\
{attachments}Task: {instruction}
{demos}Trajectory so far:
{transcript}

Proposed action and earlier refinements (latest last):
{history}
{experience}
Reply with the refined action."""

VERIFY_SELECT_SYSTEM = """\
You pick the best next action for an agent from a numbered candidate list,
using the tool catalog, the trajectory so far, and the accumulated per-tool
experience. Reply with the number of the best candidate and nothing else.

Available actions:
{catalog}"""

VERIFY_SELECT_USER = """\
{attachments}Task: {instruction}
{demos}Trajectory so far:
{transcript}

Candidates:
{candidates}
{experience}
Reply with the number of the best candidate."""


def render_attachments(task: TaskInstance) -> str:
    """Describe the task inputs; empty string when there are none."""
    parts = []
    att = task.attachments
    if att.context_text:
        parts.append(f"Context:\n{att.context_text}")
    if att.table_store_ref:
        parts.append(f"Attached database: {att.table_store_ref}")
    if att.document_files:
        parts.append("Attached files: " + ", ".join(att.document_files))
    if att.image_refs:
        parts.append("Attached images: " + ", ".join(att.image_refs))
    return ("\n".join(parts) + "\n") if parts else ""


def policy_system(catalog: str) -> str:
    return POLICY_SYSTEM.format(catalog=catalog, format_demo=FORMAT_DEMO)


def policy_user(task: TaskInstance, demos_block: str, transcript: str) -> str:
    demos = f"\n{demos_block}\n" if demos_block else ""
    trail = f"\nSteps so far:\n{transcript}\n" if transcript else "\n"
    return POLICY_USER.format(
        attachments=render_attachments(task),
        instruction=task.instruction,
        demos=demos,
        transcript=trail,
    )


def reflect_prompt(task: TaskInstance, c1: Trajectory) -> tuple[str, str]:
    user = REFLECT_USER.format(
        attachments=render_attachments(task),
        instruction=task.instruction,
        gold=task.gold,
        transcript=render_transcript(c1) or "(no steps)",
    )
    return REFLECT_SYSTEM, user


def retry_extra(c1: Trajectory, suggestion: str) -> str:
    return RETRY_EXTRA.format(
        transcript=render_transcript(c1) or "(no steps)", suggestion=suggestion
    )


def suggestion_prompt(
    task: TaskInstance, c1: Trajectory, c2: Trajectory
) -> tuple[str, str]:
    user = SUGGEST_USER.format(
        instruction=task.instruction,
        gold=task.gold,
        c1=render_transcript(c1) or "(no steps)",
        c2=render_transcript(c2) or "(no steps)",
    )
    return SUGGEST_SYSTEM, user


def merge_prompt(cap: int) -> str:
    return MERGE_SYSTEM.format(cap=cap)
