"""Steady-state gas network modelling, optimization, tracking and contract tools."""
__version__ = "0.1.0"
