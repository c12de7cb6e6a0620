"""Planar curves of minimax spirality: transcription, arc refinement and optimality checks."""

from .arcparam import RefinedSolution, assemble_pa, solve_pa
from .errors import SpiralisError
from .pipeline import Solution, refine, solve, solve_trivial
from .problem import FREE, UNBOUNDED, ProblemSpec, Trajectory, detect_trivial
from .structure import ArcKind, ArcStructure
from .verify import PmpReport, verify

__all__ = [
    "ArcKind", "ArcStructure", "FREE", "PmpReport", "ProblemSpec", "RefinedSolution",
    "Solution", "SpiralisError", "Trajectory", "UNBOUNDED", "assemble_pa", "detect_trivial",
    "refine", "solve", "solve_pa", "solve_trivial", "verify",
]
__version__ = "0.1.0"
