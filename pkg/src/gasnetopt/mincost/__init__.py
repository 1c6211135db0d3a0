"""Min-cost network flow with convex separable costs and its optimality certificate."""
from .certify import Violation, potentials_from_flow, verify_optimality
from .costs import EdgeCost
from .simplex import network_simplex
from .solver import FlowProblem, FlowSolution, dual_value, infeasibility_witness, solve_mincost

__all__ = ["EdgeCost", "FlowProblem", "FlowSolution", "Violation", "dual_value",
           "infeasibility_witness", "network_simplex", "potentials_from_flow", "solve_mincost",
           "verify_optimality"]
