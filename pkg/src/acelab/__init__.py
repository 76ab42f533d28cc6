"""Causality-aware actor-critic laboratory."""
