"""Coupled fluid-particle time stepping.

One coupled step runs a fixed phase order: map the synchronized bodies onto
the lattice, advance the fluid one lattice update with momentum-exchange
wall rules on the mapped cells, fold the exchanged momentum into per-body
hydrodynamic forces, then advance the bodies through n_sub DEM substeps
under that force plus reduced gravity, and finally restore a fluid state on
the cells the moving bodies released.

Buoyancy enters as reduced gravity (rho_p - rho_f) / rho_p * g applied to
every body, with the density ratio a single system-wide constant. The fluid
carries no gravity of its own; hydrostatic pressure is not resolved, only
the net weight of the bodies.
"""
from __future__ import annotations

import numpy as np

from ..errors import SyncError, ValidationError
from ..lbm.collision import equilibrium
from ..rpd.step import INTEGRATION_SCHEMES, sync_bodies, time_step
from ..rpd.storage import local_bodies
from .mapping import map_bodies
from .sweep import moving_boundary_sweep, reduce_hydrodynamic_forces


def reinitialize_uncovered(pdf, old_mapping, new_mapping, *, handling=None,
                           bodies_key="bodies", reference_density=1.0):
    """Give cells a body just released a valid fluid state.

    Each freed interior cell is set to the equilibrium of the mean density
    of its surviving fluid neighbors (cells free in both mappings, interior
    to the same block so the result does not depend on the partition) and
    the departing body's surface velocity at the cell center. Cells with no
    surviving neighbor fall back to the reference density.

    Returns the local number of reinitialized cells.
    """
    forest = pdf.forest
    st = pdf.stencil
    n_total = 0
    for block in forest.local_blocks():
        ow_new = new_mapping.owner[block.id]
        ow_old = old_mapping.owner.get(block.id)
        if ow_old is None or ow_old.shape != ow_new.shape:
            raise ValidationError(f"mappings disagree on {block.id}")
        old_in = ow_old[1:-1, 1:-1, 1:-1]
        new_in = ow_new[1:-1, 1:-1, 1:-1]
        freed = (old_in >= 0) & (new_in == -1)
        if not freed.any():
            continue
        field = pdf.src(block)
        interior = field.interior
        nz, ny, nx = interior.shape[:3]
        fz, fy, fx = np.nonzero(freed)
        n = len(fz)
        n_total += n

        donor = (old_in == -1) & (new_in == -1)
        if handling is not None:
            flags = block.data[handling.flags_key]
            donor &= (flags.interior & handling.fluid_mask(block)) != 0
        rho = interior.sum(axis=-1)
        acc = np.zeros(n)
        cnt = np.zeros(n)
        for i in range(1, st.q):
            tz = fz + int(st.cz[i])
            ty = fy + int(st.cy[i])
            tx = fx + int(st.cx[i])
            ok = ((tz >= 0) & (tz < nz) & (ty >= 0) & (ty < ny)
                  & (tx >= 0) & (tx < nx))
            ok[ok] = donor[tz[ok], ty[ok], tx[ok]]
            acc[ok] += rho[tz[ok], ty[ok], tx[ok]]
            cnt[ok] += 1.0
        rho_bar = np.where(cnt > 0.0, acc / np.maximum(cnt, 1.0),
                           float(reference_density))

        (cx0, cy0, cz0), _ = forest.cell_centers(block.id)
        px = cx0 + fx.astype(np.float64)
        py = cy0 + fy.astype(np.float64)
        pz = cz0 + fz.astype(np.float64)
        uids = old_in[fz, fy, fx]
        u = np.empty((n, 3))
        storage = block.data[bodies_key]
        for uid in np.unique(uids):
            body = storage.bodies.get(int(uid))
            if body is None:
                raise SyncError(f"body {uid} released cells on {block.id} "
                                "but is no longer visible there")
            m = uids == uid
            rx = px[m] - body.position[0]
            ry = py[m] - body.position[1]
            rz = pz[m] - body.position[2]
            v = body.linear_velocity
            w = body.angular_velocity
            u[m, 0] = v[0] + w[1] * rz - w[2] * ry
            u[m, 1] = v[1] + w[2] * rx - w[0] * rz
            u[m, 2] = v[2] + w[0] * ry - w[1] * rx
        interior[fz, fy, fx, :] = equilibrium(rho_bar, u, st)
    return n_total


class CoupledSystem:
    """One lattice, one body population, and the plumbing between them.

    Holds the pdf field, the collision model, the optional static boundary
    handling, the DEM contact model and the coupling constants. step()
    advances both phases by one lattice time unit.
    """

    def __init__(self, pdf, collision_model, contact_model=None, *,
                 handling=None, bodies_key="bodies", n_sub=10,
                 gravity=(0.0, 0.0, 0.0), density_ratio=1.0,
                 fluid_force=None, reference_density=1.0,
                 scheme="VelocityVerlet", broad_method="HashGrids"):
        n_sub = int(n_sub)
        if n_sub < 0:
            raise ValidationError(f"n_sub must be >= 0, got {n_sub}")
        if n_sub > 0 and contact_model is None:
            raise ValidationError("particle substeps need a contact model")
        if not float(density_ratio) > 0.0:
            raise ValidationError(
                f"density ratio must be positive, got {density_ratio}")
        if scheme not in INTEGRATION_SCHEMES:
            raise ValidationError(f"unknown integration scheme {scheme!r}")
        self.pdf = pdf
        self.collision_model = collision_model
        self.contact_model = contact_model
        self.handling = handling
        self.bodies_key = bodies_key
        self.n_sub = n_sub
        self.gravity = np.asarray(gravity, dtype=np.float64)
        self.density_ratio = float(density_ratio)
        self.fluid_force = fluid_force
        self.reference_density = float(reference_density)
        self.scheme = scheme
        self.broad_method = broad_method
        self.mapping = None
        self.steps = 0

    @property
    def forest(self):
        return self.pdf.forest

    def effective_gravity(self):
        """Gravity minus buoyancy per unit body mass."""
        return self.gravity * (1.0 - 1.0 / self.density_ratio)

    def remap(self):
        """Rebuild the coverage, e.g. after placing bodies by hand."""
        self.mapping = map_bodies(self.forest, self.pdf.stencil,
                                  handling=self.handling,
                                  key=self.bodies_key)
        return self.mapping

    def step(self):
        """Advance fluid and bodies by one time unit (collective).

        Returns {"contacts": resolved contacts, "uncovered": cells
        reinitialized} for this rank.
        """
        forest = self.forest
        m_old = self.mapping if self.mapping is not None else self.remap()
        records = moving_boundary_sweep(
            self.pdf, self.collision_model, m_old, handling=self.handling,
            force=self.fluid_force, bodies_key=self.bodies_key,
            reference_density=self.reference_density)
        reduce_hydrodynamic_forces(forest, records, key=self.bodies_key)

        contacts = 0
        if self.n_sub == 0:
            sync_bodies(forest, key=self.bodies_key)
        else:
            g_eff = self.effective_gravity()
            dt = 1.0 / self.n_sub
            for _ in range(self.n_sub):
                # the hydrodynamic force acts over the whole lattice step;
                # integrate() drains the accumulators, so feed it back in
                # front of every substep
                for body in local_bodies(forest, self.bodies_key):
                    body.force += body.hydrodynamic_force
                    body.torque += body.hydrodynamic_torque
                contacts += time_step(forest, self.contact_model, dt,
                                      gravity=g_eff, scheme=self.scheme,
                                      method=self.broad_method,
                                      key=self.bodies_key)

        m_new = map_bodies(forest, self.pdf.stencil, handling=self.handling,
                           key=self.bodies_key)
        uncovered = reinitialize_uncovered(
            self.pdf, m_old, m_new, handling=self.handling,
            bodies_key=self.bodies_key,
            reference_density=self.reference_density)
        self.mapping = m_new
        self.steps += 1
        return {"contacts": contacts, "uncovered": uncovered}


def coupled_time_step(system: CoupledSystem):
    """One coupled step; see CoupledSystem.step."""
    return system.step()
