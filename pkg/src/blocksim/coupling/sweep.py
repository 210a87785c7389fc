"""Lattice update with momentum-exchange wall rules on mapped body cells.

One sweep is the plain fused stream-collide with two additions. Covered
cells drop out of the collision, and on every boundary link the population
that would have streamed out of a covered cell is replaced by the reflected
post-collision population plus a wall-velocity correction,

    f_opp(i)(x_f, t+1) = f_i*(x_f, t) - 6 w_i rho0 (c_i . u_w),

where u_w is the body surface velocity at the link midpoint. The momentum
the link hands to the body, (2 f_i*(x_f) - 6 w_i rho0 (c_i . u_w)) c_i,
accumulates into a per-(block, body) force and torque record. Records are
folded on the owning rank in (uid, block) order, so the resulting
hydrodynamic force is independent of the block-to-rank assignment; the
fluid-side momentum loss matches the body-side gain identically because
both read the same link populations.

Everything runs in lattice units: the forest must be built with unit cell
spacing so that body positions, velocities and masses live on the same
scale as the populations.
"""
from __future__ import annotations

import numpy as np

from ..errors import SyncError, ValidationError
from ..field import GhostPackInfo, exchange_ghosts
from ..runtime.buffersystem import BufferSystem
from .._kernels import impl
from ..lbm.collision import _kernel_params
from ..lbm.sweep import _require_uniform
from ..rpd.storage import local_bodies

TAG_HYDRO = 133


def _require_unit_spacing(forest) -> None:
    for block in forest.local_blocks():
        if forest.dx(block.level) != (1.0, 1.0, 1.0):
            raise ValidationError(
                "coupling runs in lattice units: build the forest with unit "
                f"cell spacing, got {forest.dx(block.level)}")


def moving_boundary_sweep(pdf, model, mapping, *, handling=None, force=None,
                          bodies_key="bodies", reference_density=1.0):
    """Advance the lattice one step against the mapped bodies (collective).

    Returns the per-(block, body) momentum-exchange records
    [(root, level, path_bits, uid, owner_rank, force, torque), ...] for
    reduce_hydrodynamic_forces. The mapping must describe the current body
    positions on this forest.
    """
    forest = pdf.forest
    st = pdf.stencil
    _require_uniform(forest)
    _require_unit_spacing(forest)
    if mapping.stencil is not st:
        raise ValidationError("mapping built for a different stencil")
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
    if getattr(model, "omega_field", None) is not None:
        raise ValidationError("per-cell rates are not supported with "
                              "resolved bodies")

    exchange_ghosts(forest, [GhostPackInfo(pdf.key)])

    params = _kernel_params(st, model, force)
    rho0 = float(reference_density)
    records = []
    for block in forest.local_blocks():
        src = pdf.src(block)
        if src.g != 1:
            raise ValidationError("stream-collide needs exactly one pdf "
                                  "ghost layer")
        sv = src.view
        dv = pdf.dst(block).view
        try:
            ow = mapping.owner[block.id]
        except KeyError:
            raise ValidationError(f"mapping does not cover {block.id}")
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
        # covered cells leave the collision but keep their flag for the day
        # the body releases them
        fwm = fw.copy()
        fwm[ow >= 0] = 0
        impl.collide(sv, fwm, fluid_bits, model.mode, params)
        impl.stream_pull(sv, dv, st.cx, st.cy, st.cz, src.g)
        if handling is not None:
            handling.apply(block, sv, dv)

        groups = mapping.links[block.id]
        if not groups:
            continue
        storage = block.data[bodies_key]
        (cx0, cy0, cz0), _ = forest.cell_centers(block.id)
        acc = {}
        for uid, i, zs, ys, xs in groups:
            body = storage.bodies.get(uid)
            if body is None:
                raise SyncError(f"mapped body {uid} is not visible on "
                                f"{block.id}")
            ci = (float(st.cx[i]), float(st.cy[i]), float(st.cz[i]))
            # link midpoint, half a cell out of the fluid cell center
            rx = cx0 + (xs - 1.0) + 0.5 * ci[0] - body.position[0]
            ry = cy0 + (ys - 1.0) + 0.5 * ci[1] - body.position[1]
            rz = cz0 + (zs - 1.0) + 0.5 * ci[2] - body.position[2]
            v = body.linear_velocity
            w = body.angular_velocity
            uwx = v[0] + w[1] * rz - w[2] * ry
            uwy = v[1] + w[2] * rx - w[0] * rz
            uwz = v[2] + w[0] * ry - w[1] * rx
            cu = ci[0] * uwx + ci[1] * uwy + ci[2] * uwz
            corr = (6.0 * float(st.weights[i]) * rho0) * cu
            fi = sv[zs, ys, xs, i]
            dv[zs, ys, xs, st.opp[i]] = fi - corr
            dp = 2.0 * fi - corr
            f_acc, t_acc = acc.setdefault(
                uid, (np.zeros(3), np.zeros(3)))
            s = float(np.sum(dp))
            f_acc += np.array(ci) * s
            t_acc[0] += float(np.dot(ry * ci[2] - rz * ci[1], dp))
            t_acc[1] += float(np.dot(rz * ci[0] - rx * ci[2], dp))
            t_acc[2] += float(np.dot(rx * ci[1] - ry * ci[0], dp))
        bits = block.id.path_bits(forest.d)
        for uid in sorted(acc):
            f_acc, t_acc = acc[uid]
            records.append((block.id.root, block.id.level, bits, uid,
                            storage.bodies[uid].owner_rank, f_acc, t_acc))
    pdf.swap_all()
    return records


def reduce_hydrodynamic_forces(forest, records, *, key="bodies"):
    """Collective: fold momentum-exchange records onto the owning bodies.

    Every local finite body's hydrodynamic force and torque is reset and
    rebuilt from this step's records, folded in (uid, block) order. Bodies
    without records end up with zero force.
    """
    ctx = forest.ctx
    me = ctx.rank
    for body in local_bodies(forest, key):
        body.hydrodynamic_force = np.zeros(3)
        body.hydrodynamic_torque = np.zeros(3)

    peers = forest.neighbor_ranks()
    bs = BufferSystem(ctx, TAG_HYDRO)
    bs.schedule_receives(peers)
    buffers = {rank: bs.send_buffer(rank) for rank in peers}
    entries = {}
    for root, level, bits, uid, owner, force, torque in records:
        if owner == me:
            entries.setdefault(uid, []).append((root, level, bits, force,
                                                torque))
            continue
        buf = buffers.get(owner)
        if buf is None:
            raise SyncError(f"hydrodynamic force for body {uid} owned by "
                            f"non-neighbor rank {owner}")
        buf.pack_int(uid)
        buf.pack_int(root)
        buf.pack_int(level)
        buf.pack_int(bits)
        buf.pack_floats(force)
        buf.pack_floats(torque)
    bs.send_all()

    def _unpack(src, buf):
        while not buf.at_end:
            uid = buf.unpack_int()
            root = buf.unpack_int()
            level = buf.unpack_int()
            bits = buf.unpack_int()
            force = np.array(buf.unpack_floats())
            torque = np.array(buf.unpack_floats())
            entries.setdefault(uid, []).append((root, level, bits, force,
                                                torque))

    bs.wait_and_unpack(_unpack)
    if not entries:
        return
    owned = {body.uid: body for body in local_bodies(forest, key)}
    for uid in sorted(entries):
        body = owned.get(uid)
        if body is None:
            raise SyncError(f"hydrodynamic force for body {uid}, which is "
                            "not local here")
        for e in sorted(entries[uid], key=lambda e: (e[0], e[1], e[2])):
            body.hydrodynamic_force += e[3]
            body.hydrodynamic_torque += e[4]
