"""Parallel speculative anisotropic tetrahedral mesh adaptation."""
__version__ = "0.1.0"
