"""Bayesian nonparametric mediation analysis for cluster-randomized trials."""

__version__ = "0.1.0"
