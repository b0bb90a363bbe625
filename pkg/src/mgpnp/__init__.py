"""Plug-and-play primary control, stability certificates and leader-based
secondary consensus for clusters of DC microgrids."""

__version__ = "0.1.0"
