"""Cluster-then-explain toolkit for Likert survey factor scores.

Five clustering algorithms with validity-driven parameter sweeps, a
majority-vote consensus, a gradient-boosted classifier on the cluster labels,
and model explanations (PDP/ICE, step-fit dependence scores, exact Shapley
values, permutation importance).
"""

from ._kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
