"""Synthetic scenes, a non-learned tracker, experiment runner and CLI."""
