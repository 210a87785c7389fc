"""Momentum-exchange coupling between the lattice fluid and rigid bodies:
cell-accurate body mapping, moving bounce-back wall rules with per-body
force readout, uncovered-cell reinitialization, and the combined time step."""
from .mapping import ParticleMapping, covered_cell_counts, map_bodies
from .sweep import moving_boundary_sweep, reduce_hydrodynamic_forces
from .system import (CoupledSystem, coupled_time_step,
                     reinitialize_uncovered)

__all__ = [
    "CoupledSystem", "ParticleMapping", "coupled_time_step",
    "covered_cell_counts", "map_bodies", "moving_boundary_sweep",
    "reduce_hydrodynamic_forces", "reinitialize_uncovered",
]
