"""Dense convex QP solver used for the scenario programs."""

from . import backends
from .admm import AdmmSolver, solve
from .problem import QpProblem, QpSettings, QpSolution, Status

__all__ = ["AdmmSolver", "QpProblem", "QpSettings", "QpSolution", "Status", "backends", "solve"]
