"""Penalized backward solver, its lattice oracle, and structural checks."""

from .checks import (
    DecayStudy,
    EstimateReport,
    SkorohodReport,
    check_skorohod,
    estimates_report,
    mann_kendall_growth,
    penalty_decay_study,
)
from .problem import ProblemSpec
from .solver import (
    NodeValue,
    PenalizedSolution,
    RBDSDESolution,
    cauchy_gap,
    default_basis,
    solve_penalized,
    solve_reflected,
    start_cloud,
)
from .tree import tree_oracle

__all__ = [
    "DecayStudy",
    "EstimateReport",
    "NodeValue",
    "PenalizedSolution",
    "ProblemSpec",
    "RBDSDESolution",
    "SkorohodReport",
    "cauchy_gap",
    "check_skorohod",
    "default_basis",
    "estimates_report",
    "mann_kendall_growth",
    "penalty_decay_study",
    "solve_penalized",
    "solve_reflected",
    "start_cloud",
    "tree_oracle",
]
