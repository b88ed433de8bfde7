"""Branching processes with binomial disasters and their p-jump duals."""
__version__ = "0.1.0"
