"""
Observational study benchmarking package.

Tests whether treatment effects from an observational study agree with a
randomized trial up to a tolerance, and lower-bounds the worst subgroup bias.
"""

__version__ = "1.0.0"
