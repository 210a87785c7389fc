"""Lattice Boltzmann solver: stencils, collision models, boundaries, sweep."""
from .stencil import D2Q9, D3Q19, D3Q27, Stencil, basis_inverse, get_stencil, \
    moment_basis
from .collision import Guo, MRT, SRT, SimpleShift, TRT, collide_pdfs, \
    equilibrium, macroscopic
from .boundary import BOUNDARY_FLAGS, FLUID, NO_SLIP, PRESSURE, SOLID, UBB, \
    BoundaryHandling, build_index_lists, ensure_flags
from .sweep import PdfField, fill_equilibrium, macroscopic_fields, mlups, \
    stream_collide

__all__ = [
    "D2Q9", "D3Q19", "D3Q27", "Stencil", "get_stencil", "moment_basis",
    "basis_inverse",
    "SRT", "TRT", "MRT", "Guo", "SimpleShift", "collide_pdfs", "equilibrium",
    "macroscopic",
    "BOUNDARY_FLAGS", "FLUID", "NO_SLIP", "UBB", "PRESSURE", "SOLID",
    "BoundaryHandling", "build_index_lists", "ensure_flags",
    "PdfField", "fill_equilibrium", "macroscopic_fields", "mlups",
    "stream_collide",
]
