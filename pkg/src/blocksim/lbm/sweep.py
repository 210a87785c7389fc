"""Fused stream-collide time step on forest blocks.

Pull scheme over two pdf fields: after a ghost exchange every fluid cell
(including the exchanged ghost ring) is collided in the source field, the
destination field pulls dst_i(x) = src_i(x - c_i) over the interior,
boundary links overwrite the populations that would have come out of wall
cells, and the fields swap. One step therefore costs one exchange and one
pass over the lattice.
"""
from __future__ import annotations

import numpy as np

from ..errors import TopologyError, ValidationError
from ..field import FieldDataHandler, GhostPackInfo, exchange_ghosts
from .._kernels import impl
from .boundary import BoundaryHandling
from .collision import _kernel_params, equilibrium, macroscopic
from .stencil import Stencil


class PdfField:
    """Population storage: a source and a destination field of nf = q."""

    def __init__(self, forest, stencil: Stencil, key="pdf", *,
                 layout="zyxf", ghost_layers=1):
        if stencil.d != forest.d:
            raise ValidationError(
                f"{stencil.name} does not match a {forest.d}D forest")
        self.forest = forest
        self.stencil = stencil
        self.key = key
        self.dst_key = key + ".dst"
        handler = FieldDataHandler(nf=stencil.q, ghost_layers=ghost_layers,
                                   layout=layout)
        forest.register_data(key, handler)
        forest.register_data(self.dst_key, FieldDataHandler(
            nf=stencil.q, ghost_layers=ghost_layers, layout=layout))

    def src(self, block):
        return block.data[self.key]

    def dst(self, block):
        return block.data[self.dst_key]

    def swap_all(self) -> None:
        for block in self.forest.local_blocks():
            self.src(block).swap_data(self.dst(block))


def fill_equilibrium(pdf: PdfField, rho=1.0, velocity=(0.0, 0.0, 0.0)) -> None:
    """Set both pdf fields to the equilibrium of (rho, velocity).

    Either argument may be a callable of cell-center coordinate arrays
    (x, y, z); constants fill uniformly. Ghost cells included, so the first
    step is well defined even before any exchange.
    """
    forest = pdf.forest
    st = pdf.stencil
    for block in forest.local_blocks():
        field = pdf.src(block)
        g = field.g
        (cx0, cy0, cz0), (dx, dy, dz) = forest.cell_centers(block.id)
        xs = cx0 + dx * (np.arange(field.nx + 2 * g) - g)
        ys = cy0 + dy * (np.arange(field.ny + 2 * g) - g)
        zs = cz0 + dz * (np.arange(field.nz + 2 * g) - g)
        z, y, x = np.meshgrid(zs, ys, xs, indexing="ij")
        r = rho(x, y, z) if callable(rho) else np.full(x.shape, float(rho))
        if callable(velocity):
            u = np.stack(np.broadcast_arrays(*velocity(x, y, z)), axis=-1)
        else:
            u = np.broadcast_to(np.asarray(velocity, dtype=np.float64),
                                x.shape + (len(velocity),))
        values = equilibrium(r, u, st)
        field.view[...] = values
        pdf.dst(block).view[...] = values


def _require_uniform(forest) -> None:
    level = None
    for block in forest.local_blocks():
        if level is None:
            level = block.level
        if block.level != level:
            raise TopologyError("stream-collide needs a uniform refinement "
                                "level")
        for rec in block.neighbors:
            if rec.level != level:
                raise TopologyError("stream-collide needs a uniform "
                                    "refinement level")


def stream_collide(pdf: PdfField, model, *, force=None, handling=None) -> None:
    """Advance the lattice by one time step (collective)."""
    forest = pdf.forest
    st = pdf.stencil
    _require_uniform(forest)
    if handling is not None and handling.stencil is not st:
        raise ValidationError("boundary handling built for a different "
                              "stencil")
    if handling is None:
        for a in range(forest.d):
            if not forest.periodic[a]:
                raise ValidationError(
                    "without boundary handling the domain must be fully "
                    "periodic")
    elif handling._links is None:
        handling.freeze()

    packs = [GhostPackInfo(pdf.key)]
    omega_key = getattr(model, "omega_field", None)
    if omega_key is not None:
        packs.append(GhostPackInfo(omega_key))
    exchange_ghosts(forest, packs)

    params = _kernel_params(st, model, force)
    for block in forest.local_blocks():
        src = pdf.src(block)
        if src.g != 1:
            raise ValidationError("stream-collide needs exactly one pdf "
                                  "ghost layer")
        sv = src.view
        dv = pdf.dst(block).view
        if handling is not None:
            flag_field = block.data[handling.flags_key]
            if flag_field.g != src.g:
                raise ValidationError("flag and pdf ghost layers differ")
            fw = flag_field.view
            known = handling.known_mask(block)
            interior = flag_field.interior
            if ((interior & known) == 0).any():
                z, y, x = (int(v[0]) for v in
                           np.nonzero((interior & known) == 0))
                raise ValidationError(
                    f"unflagged cell ({x}, {y}, {z}) in {block.id}")
            fluid_bits = handling.fluid_mask(block)
        else:
            fw = np.ones(sv.shape[:3], dtype=np.uint32)
            fluid_bits = np.uint32(1)
        if omega_key is not None:
            ow = block.data[omega_key]
            win = ow.field.view[..., 0] if hasattr(ow, "field") else ow.view[..., 0]
            inner = win[1:-1, 1:-1, 1:-1]
            if np.any(inner <= 0.0) or np.any(inner >= 2.0):
                raise ValidationError("per-cell rates must lie in (0, 2)")
            params["omega_window"] = win
        impl.collide(sv, fw, fluid_bits, model.mode, params)
        impl.stream_pull(sv, dv, st.cx, st.cy, st.cz, src.g)
        if handling is not None:
            handling.apply(block, sv, dv)
    pdf.swap_all()


def macroscopic_fields(pdf: PdfField, density="rho", velocity="vel", *,
                       force=None, handling=None) -> None:
    """Write per-cell density and velocity into registered output fields.

    Non-fluid cells keep their current values. The output slots must exist
    (nf = 1 for density, nf = forest.d for velocity); pass None to skip one.
    """
    forest = pdf.forest
    st = pdf.stencil
    for block in forest.local_blocks():
        f = pdf.src(block).interior
        rho, u = macroscopic(f, st, force=force)
        if handling is not None:
            flags = block.data[handling.flags_key]
            fluid = (flags.interior & handling.fluid_mask(block)) != 0
        else:
            fluid = slice(None)
        if density is not None:
            block.data[density].interior[..., 0][fluid] = rho[fluid]
        if velocity is not None:
            out = block.data[velocity].interior
            for a in range(out.shape[-1]):
                out[..., a][fluid] = u[..., a][fluid]


def mlups(interior_cells, steps, seconds) -> float:
    """Million lattice-cell updates per second."""
    if seconds <= 0.0:
        raise ValidationError(f"need a positive wall time, got {seconds}")
    return interior_cells * steps / seconds / 1.0e6
