"""Flag-driven boundary conditions on the lattice.

Cells carry exactly one of the canonical flags: Fluid cells are collided and
streamed, NoSlip/UBB/Pressure cells realize walls through link rules, Solid
cells are inert filler that must never be reachable from a fluid cell (wrap
obstacles in a boundary-flagged surface layer).

Link rules write the post-streaming value of the reflected population at the
fluid cell, reading only that cell's post-collision state:

  NoSlip    f_opp(i) = f_i
  UBB       f_opp(i) = f_i - 6 w_i rho_0 (c_i . u_wall)
  Pressure  f_opp(i) = -f_i + 2 w_i rho_w (1 + 4.5 (c_i . u)^2 - 1.5 u^2)

with c_i pointing from the fluid cell into the wall and u taken from the
fluid cell itself (first-order extrapolation).
"""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from ..field import FlagFieldHandler, GhostPackInfo, exchange_ghosts
from .stencil import Stencil

FLUID = "Fluid"
NO_SLIP = "NoSlip"
UBB = "UBB"
PRESSURE = "Pressure"
SOLID = "Solid"
BOUNDARY_FLAGS = (FLUID, NO_SLIP, UBB, PRESSURE, SOLID)
_LINK_FLAGS = (NO_SLIP, UBB, PRESSURE)


def ensure_flags(forest, flags="flags", ghost_layers=1) -> FlagFieldHandler:
    """Register the flag slot if needed and the canonical flag names."""
    if flags not in forest.handlers:
        forest.register_data(flags, FlagFieldHandler(ghost_layers))
    handler = forest.handlers[flags]
    if not isinstance(handler, FlagFieldHandler):
        raise ValidationError(f"data slot {flags!r} is not a flag field")
    for name in BOUNDARY_FLAGS:
        if name not in handler.registry:
            handler.register(name)
    return handler


def build_index_lists(forest, stencil: Stencil, flags="flags"):
    """Enumerate boundary links per local block.

    Returns {block_id: {flag_name: [(i, zs, ys, xs), ...]}} where the index
    arrays address fluid cells in ghost-inclusive view coordinates and i is
    the direction from the fluid cell into the flagged neighbor. Ghost flags
    must be current (exchange first; BoundaryHandling.freeze does).
    """
    out = {}
    for block in forest.local_blocks():
        flag_field = block.data[flags]
        g = flag_field.g
        if g < 1:
            raise ValidationError("boundary links need one flag ghost layer")
        registry = flag_field.registry
        masks = {name: registry[name] for name in BOUNDARY_FLAGS}
        known = np.uint32(0)
        for m in masks.values():
            known |= m
        view = flag_field.view
        nz, ny, nx = view.shape[0] - 2 * g, view.shape[1] - 2 * g, view.shape[2] - 2 * g
        interior = view[g:g + nz, g:g + ny, g:g + nx]
        flagged = interior & known
        conflict = flagged & (flagged - 1)
        if conflict.any():
            z, y, x = (int(v[0]) for v in np.nonzero(conflict))
            raise ValidationError(
                f"cell ({x}, {y}, {z}) of {block.id} carries conflicting "
                "boundary flags")
        fluid = (interior & masks[FLUID]) != 0
        lists = {name: [] for name in _LINK_FLAGS}
        for i in range(1, stencil.q):
            cx, cy, cz = stencil.c[i]
            nb = view[g + cz:g + cz + nz, g + cy:g + cy + ny,
                      g + cx:g + cx + nx]
            if (fluid & ((nb & masks[SOLID]) != 0)).any():
                raise ValidationError(
                    f"fluid cell of {block.id} streams from a Solid cell; "
                    "flag the obstacle surface NoSlip/UBB/Pressure")
            if (fluid & ((nb & known) == 0)).any():
                raise ValidationError(
                    f"fluid cell of {block.id} streams from an unflagged "
                    f"cell (direction {stencil.c[i]})")
            for name in _LINK_FLAGS:
                hit = fluid & ((nb & masks[name]) != 0)
                if hit.any():
                    zs, ys, xs = np.nonzero(hit)
                    lists[name].append((i, zs + g, ys + g, xs + g))
        out[block.id] = lists
    return out


class BoundaryHandling:
    """Boundary configuration plus frozen link lists for one pdf field.

    freeze() is collective: it refreshes flag ghosts, then scans for links.
    Call it again after editing flags.
    """

    def __init__(self, forest, stencil: Stencil, *, flags="flags",
                 ubb_velocity=(0.0, 0.0, 0.0), pressure_density=1.0,
                 reference_density=1.0):
        if stencil.d != forest.d:
            raise ValidationError(
                f"{stencil.name} does not match a {forest.d}D forest")
        self.forest = forest
        self.stencil = stencil
        self.flags_key = flags
        uw = tuple(float(v) for v in ubb_velocity)
        if len(uw) == 2:
            uw = (uw[0], uw[1], 0.0)
        if len(uw) != 3:
            raise ValidationError(f"wall velocity needs 2 or 3 components, "
                                  f"got {ubb_velocity!r}")
        self.ubb_velocity = uw
        self.pressure_density = float(pressure_density)
        self.reference_density = float(reference_density)
        self.handler = ensure_flags(forest, flags)
        self._links = None

    def freeze(self) -> None:
        exchange_ghosts(self.forest, [GhostPackInfo(self.flags_key)])
        self._links = build_index_lists(self.forest, self.stencil,
                                        self.flags_key)

    @property
    def links(self):
        if self._links is None:
            raise ValidationError("boundary handling not frozen yet")
        return self._links

    def link_count(self, block) -> int:
        lists = self.links[block.id]
        return sum(len(zs) for entries in lists.values()
                   for (_, zs, _, _) in entries)

    def known_mask(self, block) -> np.uint32:
        registry = block.data[self.flags_key].registry
        out = np.uint32(0)
        for name in BOUNDARY_FLAGS:
            out |= registry[name]
        return out

    def fluid_mask(self, block) -> np.uint32:
        return block.data[self.flags_key].registry[FLUID]

    def apply(self, block, src, dst) -> None:
        """Write boundary links of one block into dst from post-collision src.

        src/dst are ghost-inclusive (z, y, x, q) views of the pdf fields.
        """
        st = self.stencil
        w = st.weights
        opp = st.opp
        lists = self.links[block.id]
        for i, zs, ys, xs in lists[NO_SLIP]:
            dst[zs, ys, xs, opp[i]] = src[zs, ys, xs, i]
        uwx, uwy, uwz = self.ubb_velocity
        rho0 = self.reference_density
        for i, zs, ys, xs in lists[UBB]:
            cx, cy, cz = st.c[i]
            cu = cx * uwx + cy * uwy + cz * uwz
            dst[zs, ys, xs, opp[i]] = src[zs, ys, xs, i] - 6.0 * w[i] * rho0 * cu
        rho_w = self.pressure_density
        for i, zs, ys, xs in lists[PRESSURE]:
            cell = src[zs, ys, xs, :]
            rho = cell[:, 0].copy()
            for k in range(1, st.q):
                rho += cell[:, k]
            mx = np.zeros_like(rho)
            my = np.zeros_like(rho)
            mz = np.zeros_like(rho)
            for k in range(st.q):
                kcx, kcy, kcz = st.c[k]
                if kcx:
                    mx += kcx * cell[:, k]
                if kcy:
                    my += kcy * cell[:, k]
                if kcz:
                    mz += kcz * cell[:, k]
            ux = mx / rho
            uy = my / rho
            uz = mz / rho
            cx, cy, cz = st.c[i]
            cu = cx * ux + cy * uy + cz * uz
            usq = ux * ux + uy * uy + uz * uz
            dst[zs, ys, xs, opp[i]] = -src[zs, ys, xs, i] + 2.0 * w[i] * rho_w * (
                1.0 + 4.5 * cu * cu - 1.5 * usq)
