"""Obstacle problems, N-membranes and implicit-obstacle QVIs with Orlicz growth."""

from .assembly import (DiscreteOperator, DualField, NonFiniteEnergyError, apply_A, energy,
                       residual, solve_equation)
from .descent import SolveReport
from .membranes import (MembraneSystem, project_ordered, solve_membranes_penalized,
                        solve_membranes_vi, verify_ls_membranes, xi_coefficients)
from .mesh import Field, GridMismatchError, StructuredGrid, build_grid, lattice_ops
from .obstacle import (InfeasibleProblemError, ObstacleProblem, solve_one_obstacle,
                       solve_two_obstacle, verify_comparison, verify_lewy_stampacchia,
                       verify_linf_dependence)
from .qvi import IncompatibleConstantsError, QviProblem, solve_qvi
from .young import (Combination, LogGrowth, PowerLaw, YoungFunction, check_structure,
                    luxemburg_norm, make_structural, modular)

__version__ = "0.1.0"

__all__ = [
    "Combination", "DiscreteOperator", "DualField", "Field", "GridMismatchError",
    "IncompatibleConstantsError", "InfeasibleProblemError", "LogGrowth", "MembraneSystem",
    "NonFiniteEnergyError", "ObstacleProblem", "PowerLaw", "QviProblem", "SolveReport",
    "StructuredGrid", "YoungFunction", "apply_A", "build_grid", "check_structure", "energy",
    "lattice_ops", "luxemburg_norm", "make_structural", "modular", "project_ordered", "residual",
    "solve_equation", "solve_membranes_penalized", "solve_membranes_vi", "solve_one_obstacle",
    "solve_qvi", "solve_two_obstacle", "verify_comparison", "verify_lewy_stampacchia",
    "verify_linf_dependence", "verify_ls_membranes", "xi_coefficients",
]
