"""Regularized soft actor-critic: exact tabular solver, neural agent, baselines and harness."""

__version__ = "0.1.0"
