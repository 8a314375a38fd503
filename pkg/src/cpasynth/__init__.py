"""Stabilizing CPA controllers and CPA Lyapunov functions by iterative semidefinite programming."""

__version__ = "0.1.0"
