"""HTTP service wrapping the agent runtime."""
