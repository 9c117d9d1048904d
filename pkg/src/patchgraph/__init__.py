"""Patch semantic graphs plus graph-conditioned low-rank adapter training
for patch correctness classification."""

__version__ = "0.1.0"
