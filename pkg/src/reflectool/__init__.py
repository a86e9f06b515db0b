"""Reflection-aware tool-augmented agent runtime.

The package is organized around two stages: an optimization stage that
builds a long-term memory of successful trajectories plus per-tool
experience notes, and an inference stage that retrieves demonstrations
from that memory and verifies every proposed action before executing it.
A deterministic scripted backend makes both stages fully testable without
a live model.
"""

__version__ = "0.1.0"
