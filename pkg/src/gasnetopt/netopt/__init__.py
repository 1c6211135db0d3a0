"""Discrete and continuous optimization of station schemes and controls."""
from .bnb import Budget, branch_and_bound
from .evaluate import Evaluator, SearchSpace, exhaustive
from .objective import OBJECTIVE_KINDS, Objective, evaluate_objective, make_objective
from .optimize import METHODS, optimize, power_report, staged, verify
from .penalty import penalty_search
from .propagate import Solution, feasibility_report, solve_hydraulic_state, tree_for

__all__ = ["Budget", "Evaluator", "METHODS", "OBJECTIVE_KINDS", "Objective", "SearchSpace", "Solution",
           "branch_and_bound", "evaluate_objective", "exhaustive", "feasibility_report", "make_objective",
           "optimize", "penalty_search", "power_report", "solve_hydraulic_state", "staged", "tree_for",
           "verify"]
