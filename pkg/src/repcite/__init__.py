"""Hierarchical Bayesian modeling of per-year citation counts of reproduced
and non-reproduced papers, with count-regression baselines."""

__version__ = "0.1.0"
