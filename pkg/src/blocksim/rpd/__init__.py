"""Rigid particle dynamics on the block partitioning: block-owned body
storage, grid-based contact detection, spring-dashpot (DEM) contact forces,
explicit time integration, and ghost-body synchronization."""
from .body import (GHOST, GLOBAL, LOCAL, ContactModel, HalfSpace, RigidBody,
                   Sphere, quat_from_rotation, quat_mul, quat_normalize,
                   rotation_matrix)
from .contact import (BROAD_PHASE_METHODS, Contact, HierarchicalHashGrid,
                      broad_phase, detect_contacts, narrow_phase,
                      reduce_forces, resolve_contacts_dem)
from .step import (INTEGRATION_SCHEMES, integrate, sync_bodies, time_step,
                   validate_storage)
from .storage import (BodyStorage, BodyStorageHandler, add_halfspace,
                      add_sphere, find_body, gather_bodies, ghost_bodies,
                      global_bodies, local_bodies, ownership_census,
                      register_bodies, total_kinetic_energy,
                      total_linear_momentum)
from .vtk import write_particles_vtk

__all__ = [
    "BROAD_PHASE_METHODS", "BodyStorage", "BodyStorageHandler", "Contact",
    "ContactModel", "GHOST", "GLOBAL", "HalfSpace", "HierarchicalHashGrid",
    "INTEGRATION_SCHEMES", "LOCAL", "RigidBody", "Sphere", "add_halfspace",
    "add_sphere", "broad_phase", "detect_contacts", "find_body",
    "gather_bodies", "ghost_bodies", "global_bodies", "integrate",
    "local_bodies", "narrow_phase", "ownership_census", "quat_from_rotation",
    "quat_mul", "quat_normalize", "reduce_forces", "register_bodies",
    "resolve_contacts_dem", "rotation_matrix", "sync_bodies", "time_step",
    "total_kinetic_energy", "total_linear_momentum", "validate_storage",
    "write_particles_vtk",
]
