"""Tool registry, inner actions, modality gating, and the concrete tools."""

from reflectool.toolbox.registry import (
    OBSERVATION_CHAR_CAP,
    ToolContext,
    ToolEnv,
    ToolRegistry,
    default_registry,
    invoke,
    validate_invocation,
)

__all__ = [
    "OBSERVATION_CHAR_CAP",
    "ToolContext",
    "ToolEnv",
    "ToolRegistry",
    "default_registry",
    "invoke",
    "validate_invocation",
]
