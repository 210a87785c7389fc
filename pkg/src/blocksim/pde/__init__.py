"""Poisson solvers: Jacobi, red-black SOR and conjugate gradients."""
from .poisson import (
    DIVERGENCE_LIMIT,
    PERIODIC,
    Dirichlet,
    PoissonProblem,
    apply_operator,
    cg_solve,
    jacobi_step,
    sor_step,
)

__all__ = [
    "DIVERGENCE_LIMIT",
    "PERIODIC",
    "Dirichlet",
    "PoissonProblem",
    "apply_operator",
    "cg_solve",
    "jacobi_step",
    "sor_step",
]
