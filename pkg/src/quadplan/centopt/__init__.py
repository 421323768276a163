"""Centroidal trajectory optimization."""

from quadplan.centopt.dynamics import (CentroidalState, CentroidalTrajectory, check_constraints,
                                       dynamics_residual, integrate_step)
from quadplan.centopt.qp import QPError, QPInfeasibleError, QPResult, qp_solve
from quadplan.centopt.solver import CentroidalInfeasible, OptSettings, initial_state, solve

__all__ = [
    "CentroidalInfeasible", "CentroidalState", "CentroidalTrajectory", "OptSettings", "QPError",
    "QPInfeasibleError", "QPResult", "check_constraints", "dynamics_residual", "initial_state", "integrate_step",
    "qp_solve", "solve",
]
