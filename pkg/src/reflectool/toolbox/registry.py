"""Tool registry, modality gating, and dispatch.

Gating flags exactly three mismatch classes — image tools without an image,
table tools without a database, document retrieval without files — plus
unregistered action names. A flagged step is recorded as a selection error
and never aborts the run.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

from reflectool.backend import Backend
from reflectool.model import (
    ActionInvocation,
    Modality,
    Observation,
    ObservationStatus,
    TaskInstance,
    ToolCategory,
    ToolDescriptor,
)
from reflectool.toolbox import calculator as calc
from reflectool.toolbox.entities import entity_tag
from reflectool.toolbox.retrieval import Corpus, corpus_retrieve, doc_rag_search
from reflectool.toolbox.tables import TableStore, schema_manual, structured_query

logger = logging.getLogger(__name__)

OBSERVATION_CHAR_CAP = 4000
_TRUNCATION_MARKER = "... [truncated]"

Handler = Callable[[ActionInvocation, "ToolContext"], Observation]


@dataclass(frozen=True)
class RegisteredTool:
    descriptor: ToolDescriptor
    handler: Handler


class ToolRegistry:
    """Ordered name -> (descriptor, handler) mapping; immutable after setup."""

    def __init__(self) -> None:
        self._tools: dict[str, RegisteredTool] = {}

    def register(self, descriptor: ToolDescriptor, handler: Handler) -> None:
        if descriptor.name in self._tools:
            raise ValueError(f"duplicate tool name {descriptor.name!r}")
        self._tools[descriptor.name] = RegisteredTool(descriptor, handler)

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    def get(self, name: str) -> RegisteredTool:
        return self._tools[name]

    def names(self) -> list[str]:
        return list(self._tools)

    def descriptors(self) -> list[ToolDescriptor]:
        return [tool.descriptor for tool in self._tools.values()]

    def catalog_text(self) -> str:
        """One line per tool, descriptor text verbatim."""
        return "\n".join(
            f"{d.name}: {d.description}" for d in self.descriptors()
        )


@dataclass
class ToolEnv:
    """Shared read-only resources tools draw on during a run."""

    registry: ToolRegistry
    table_stores: dict[str, TableStore] = field(default_factory=dict)
    corpus: Corpus | None = None
    gazetteer: frozenset[str] = frozenset()
    remote_lookup: Callable[[str], str] | None = None


@dataclass
class ToolContext:
    task: TaskInstance
    env: ToolEnv
    backend: Backend


def validate_invocation(
    inv: ActionInvocation, task: TaskInstance, registry: ToolRegistry
) -> str | None:
    """Reason string when the invocation is a tool selection error, else None."""
    if inv.action_name not in registry:
        return f"unknown action: {inv.action_name}"
    required = registry.get(inv.action_name).descriptor.required_modalities
    if Modality.IMAGE in required and not task.attachments.image_refs:
        return "tool selection error: no image input"
    if Modality.TABLE_STORE in required and task.attachments.table_store_ref is None:
        return "tool selection error: no database input"
    if Modality.DOCUMENT_FILES in required and not task.attachments.document_files:
        return "tool selection error: no document file input"
    return None


def invoke(inv: ActionInvocation, ctx: ToolContext) -> Observation:
    """Dispatch a validated invocation; tool failures become tool_error
    observations and never abort the trajectory."""
    tool = ctx.env.registry.get(inv.action_name)
    try:
        obs = tool.handler(inv, ctx)
    except Exception as exc:
        logger.warning("tool %s raised: %s", inv.action_name, exc)
        obs = Observation(f"tool error: {exc}", ObservationStatus.TOOL_ERROR)
    if len(obs.text) > OBSERVATION_CHAR_CAP:
        cut = OBSERVATION_CHAR_CAP - len(_TRUNCATION_MARKER)
        obs = Observation(obs.text[:cut] + _TRUNCATION_MARKER, obs.status)
    return obs


# --- handlers ----------------------------------------------------------------


def _ack(inv: ActionInvocation, ctx: ToolContext) -> Observation:
    return Observation("OK. Continue.")


def _finish(inv: ActionInvocation, ctx: ToolContext) -> Observation:
    return Observation("Task finished.")


def _calculator(inv: ActionInvocation, ctx: ToolContext) -> Observation:
    expr = inv.sole_input()
    if not expr:
        return Observation("SyntaxError: empty expression", ObservationStatus.TOOL_ERROR)
    try:
        return Observation(calc.format_number(calc.calculator_eval(expr)))
    except calc.CalculatorError as exc:
        return Observation(f"{exc.label}: {exc}", ObservationStatus.TOOL_ERROR)


def _corpus_retriever(inv: ActionInvocation, ctx: ToolContext) -> Observation:
    if ctx.env.corpus is None or len(ctx.env.corpus) == 0:
        return Observation("no knowledge corpus configured", ObservationStatus.TOOL_ERROR)
    try:
        k = int(inv.param("k", "1"))
    except ValueError:
        return Observation("parameter k must be an integer", ObservationStatus.TOOL_ERROR)
    results = corpus_retrieve(inv.sole_input(), ctx.env.corpus, max(1, k))
    return Observation("\n".join(f"[{doc_id}] {text}" for doc_id, _, text in results))


def _doc_rag(inv: ActionInvocation, ctx: ToolContext) -> Observation:
    files = ctx.task.attachments.document_files
    try:
        chunks = doc_rag_search(inv.sole_input(), files)
    except OSError as exc:
        return Observation(f"cannot read file: {exc}", ObservationStatus.TOOL_ERROR)
    return Observation("\n\n".join(f"{marker}\n{text}" for marker, text in chunks))


def _resolve_store(ctx: ToolContext) -> TableStore | None:
    ref = ctx.task.attachments.table_store_ref
    if ref is None:
        return None
    return ctx.env.table_stores.get(ref)


def _structured_query(inv: ActionInvocation, ctx: ToolContext) -> Observation:
    store = _resolve_store(ctx)
    if store is None:
        ref = ctx.task.attachments.table_store_ref
        return Observation(f"table store {ref!r} is not loaded", ObservationStatus.TOOL_ERROR)
    obs, _ = structured_query(inv.sole_input(), store, ctx.backend)
    return obs


def _schema_manual(inv: ActionInvocation, ctx: ToolContext) -> Observation:
    store = _resolve_store(ctx)
    if store is None:
        ref = ctx.task.attachments.table_store_ref
        return Observation(f"table store {ref!r} is not loaded", ObservationStatus.TOOL_ERROR)
    return Observation(schema_manual(inv.sole_input(), store))


def _entity_tagger(inv: ActionInvocation, ctx: ToolContext) -> Observation:
    matches = entity_tag(inv.sole_input(), ctx.env.gazetteer)
    if not matches:
        return Observation("(no entities found)")
    return Observation(
        "\n".join(f"{surface} ({start}, {end})" for surface, (start, end) in matches)
    )


def _remote_lookup(inv: ActionInvocation, ctx: ToolContext) -> Observation:
    if ctx.env.remote_lookup is None:
        return Observation(
            "offline: remote lookup not configured", ObservationStatus.TOOL_ERROR
        )
    return Observation(ctx.env.remote_lookup(inv.sole_input()))


def _image_stub(inv: ActionInvocation, ctx: ToolContext) -> Observation:
    return Observation("no image model configured", ObservationStatus.TOOL_ERROR)


def default_registry() -> ToolRegistry:
    """The standard desk-scale toolbox: the three inner actions plus the
    concrete text/code/file tools and a descriptor-only image stub."""
    none = frozenset({Modality.NONE})
    registry = ToolRegistry()
    registry.register(
        ToolDescriptor(
            "Plan",
            "Plan step-by-step how to solve the task; usually the first action.",
            ToolCategory.INNER,
            none,
        ),
        _ack,
    )
    registry.register(
        ToolDescriptor(
            "Think",
            "Reason about the current state of the task before acting.",
            ToolCategory.INNER,
            none,
        ),
        _ack,
    )
    registry.register(
        ToolDescriptor(
            "Finish",
            "Complete the task with a final answer, e.g. Finish[answer=...].",
            ToolCategory.INNER,
            none,
        ),
        _finish,
    )
    registry.register(
        ToolDescriptor(
            "Calculator",
            "Evaluate an arithmetic expression with + - * / ^ and parentheses.",
            ToolCategory.NUMERICAL,
            none,
        ),
        _calculator,
    )
    registry.register(
        ToolDescriptor(
            "corpus_retriever",
            "Retrieve the most relevant passages from the reference text corpus.",
            ToolCategory.KNOWLEDGE,
            none,
        ),
        _corpus_retriever,
    )
    registry.register(
        ToolDescriptor(
            "remote_lookup",
            "Look up a term in an external knowledge service.",
            ToolCategory.KNOWLEDGE,
            none,
        ),
        _remote_lookup,
    )
    registry.register(
        ToolDescriptor(
            "image_qa",
            "Answer a question about an attached image.",
            ToolCategory.MULTIMODAL,
            frozenset({Modality.IMAGE}),
        ),
        _image_stub,
    )
    registry.register(
        ToolDescriptor(
            "structured_query",
            "Fetch values from the attached database by describing what you need.",
            ToolCategory.NUMERICAL,
            frozenset({Modality.TABLE_STORE}),
        ),
        _structured_query,
    )
    registry.register(
        ToolDescriptor(
            "schema_manual",
            "Show the attached database's tables and column descriptions for a query.",
            ToolCategory.NUMERICAL,
            frozenset({Modality.TABLE_STORE}),
        ),
        _schema_manual,
    )
    registry.register(
        ToolDescriptor(
            "entity_tagger",
            "Tag domain entities mentioned in a sentence.",
            ToolCategory.DATA,
            none,
        ),
        _entity_tagger,
    )
    registry.register(
        ToolDescriptor(
            "doc_rag",
            "Search the uploaded document files and return the most relevant chunks.",
            ToolCategory.DATA,
            frozenset({Modality.DOCUMENT_FILES}),
        ),
        _doc_rag,
    )
    return registry
