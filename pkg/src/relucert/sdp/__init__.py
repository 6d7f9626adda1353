"""Layerwise Gram relaxations and the self-contained conic solvers."""

from .program import ConicProgram, ConstraintRow, build_relaxation
from .solver import (ABound, Extraction, GramSolution, a_from_b_bound,
                     eigen_verdict, extract_candidate, solve_sdp,
                     standard_form)

__all__ = [
    "ConicProgram",
    "ConstraintRow",
    "build_relaxation",
    "GramSolution",
    "Extraction",
    "ABound",
    "solve_sdp",
    "extract_candidate",
    "a_from_b_bound",
    "standard_form",
    "eigen_verdict",
]
