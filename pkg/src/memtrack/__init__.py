"""Streaming video object tracking with a diversity-selected long-term memory bank."""

__version__ = "0.1.0"
