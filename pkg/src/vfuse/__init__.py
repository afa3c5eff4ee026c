"""Multi-view depth map fusion with visibility constraint volumes."""

__version__ = "0.1.0"
