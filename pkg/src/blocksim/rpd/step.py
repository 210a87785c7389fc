"""Time integration and the end-of-step body synchronization.

Integration advances Local bodies only. Synchronization then restores the
distributed invariants in two next-neighbor rounds: first ownership
migration (a body whose center left its block becomes Local on the block
that now contains the center), then a full ghost rebuild (a copy of every
Local body on each neighboring block its inflated bounding sphere touches).
Ghost state is always derived from the master with the same arithmetic, so
copies are bitwise reproducible; periodic images are realized by shifting
positions by whole domain extents.
"""
from __future__ import annotations

import numpy as np

from ..blockforest.blockid import BlockId
from ..errors import NumericsError, SyncError, ValidationError
from ..runtime.buffersystem import BufferSystem
from .body import GHOST, RigidBody, _vec3, quat_from_rotation, quat_mul, \
    quat_normalize
from .contact import detect_contacts, reduce_forces, resolve_contacts_dem
from .storage import _contains, _handler, ownership_census, pack_body, \
    unpack_body

TAG_MIGRATE = 131
TAG_BODY_GHOSTS = 132

INTEGRATION_SCHEMES = ("SemiImplicitEuler", "VelocityVerlet")


def _domain_extents(forest):
    x0, y0, z0, x1, y1, z1 = forest.domain
    return np.array([x1 - x0, y1 - y0, z1 - z0])


def _neighbor_images(block):
    """Unique (block id, shift, rank) neighbor images, deterministic order."""
    seen = {}
    for rec in block.neighbors:
        seen[(rec.block_id, rec.shift)] = rec.rank
    return [(bid, shift, seen[(bid, shift)]) for bid, shift in sorted(seen)]


def _shifted_aabb(forest, bid, shift, extents):
    box = forest.block_aabb(bid)
    return (box[0] + shift[0] * extents[0], box[1] + shift[1] * extents[1],
            box[2] + shift[2] * extents[2], box[3] + shift[0] * extents[0],
            box[4] + shift[1] * extents[1], box[5] + shift[2] * extents[2])


def _sphere_overlaps(aabb, center, radius):
    d2 = 0.0
    for a in range(3):
        v = center[a]
        if v < aabb[a]:
            d2 += (aabb[a] - v) ** 2
        elif v > aabb[a + 3]:
            d2 += (v - aabb[a + 3]) ** 2
    return d2 <= radius * radius


def _pack_block_id(buf, bid, d):
    buf.pack_int(bid.root)
    buf.pack_int(bid.level)
    buf.pack_int(bid.path_bits(d))


def _unpack_block_id(buf, d):
    return BlockId.from_path_bits(buf.unpack_int(), buf.unpack_int(),
                                  buf.unpack_int(), d)


def integrate(forest, scheme, dt, *, gravity=(0.0, 0.0, 0.0), key="bodies"):
    """Advance all Local bodies by dt and clear the force accumulators.

    SemiImplicitEuler kicks the velocities first and drifts positions with
    the new values. VelocityVerlet keeps the previous step's acceleration
    per body: the velocity completes its trailing half kick before the
    position update, which reproduces the standard scheme from the second
    step on (the first step falls back to a plain kick).
    """
    if scheme not in INTEGRATION_SCHEMES:
        raise ValidationError(
            f"scheme must be one of {INTEGRATION_SCHEMES}, got {scheme!r}")
    dt = float(dt)
    g = _vec3(gravity, "gravity")
    handler = _handler(forest, key)
    for block in forest.local_blocks():
        for body in block.data[key].local():
            accel = body.force * body.inv_mass + g
            ang = body.inv_inertia_world() @ body.torque
            if scheme == "SemiImplicitEuler":
                body.linear_velocity = body.linear_velocity + dt * accel
                body.position = body.position + dt * body.linear_velocity
                body.angular_velocity = body.angular_velocity + dt * ang
            else:
                if not body._kicked:
                    body._accel = accel
                    body._ang_accel = ang
                    body._kicked = True
                body.linear_velocity = body.linear_velocity \
                    + 0.5 * dt * (body._accel + accel)
                body.position = body.position + dt * body.linear_velocity \
                    + 0.5 * dt * dt * accel
                body.angular_velocity = body.angular_velocity \
                    + 0.5 * dt * (body._ang_accel + ang)
                body._accel = accel
                body._ang_accel = ang
            body.orientation = quat_normalize(quat_mul(
                quat_from_rotation(body.angular_velocity * dt),
                body.orientation))
            body.force[:] = 0.0
            body.torque[:] = 0.0
            if not (np.isfinite(body.position).all()
                    and np.isfinite(body.linear_velocity).all()
                    and np.isfinite(body.angular_velocity).all()
                    and np.isfinite(body.orientation).all()):
                raise NumericsError(f"body {body.uid} became non-finite")
    for plane in handler.global_bodies:
        plane.force[:] = 0.0
        plane.torque[:] = 0.0


def _ghost_copy(body, shift, extents, owner):
    ghost = RigidBody(body.uid, body.shape, body.position.copy(),
                      orientation=body.orientation.copy(),
                      linear_velocity=body.linear_velocity.copy(),
                      angular_velocity=body.angular_velocity.copy(),
                      mass=body.mass, classification=GHOST, owner_rank=owner)
    if any(shift):
        ghost.position = ghost.position - np.array(shift, dtype=np.float64) * extents
    ghost._image = tuple(shift)
    return ghost


def sync_bodies(forest, *, key="bodies"):
    """Collective: migrate ownership, then rebuild every ghost copy."""
    ctx = forest.ctx
    me = ctx.rank
    handler = _handler(forest, key)
    threshold = handler.contact_threshold
    extents = _domain_extents(forest)
    peers = forest.neighbor_ranks()

    # every ghost is stale once the owners have moved; drop them up front so
    # migrating bodies can land on blocks that shadowed them
    for block in forest.local_blocks():
        block.data[key].clear_ghosts()

    moves = []
    for block in forest.local_blocks():
        box = forest.block_aabb(block.id)
        for body in block.data[key].local():
            if _contains(box, body.position):
                continue
            target = None
            for bid, shift, rank in _neighbor_images(block):
                if _contains(_shifted_aabb(forest, bid, shift, extents),
                             body.position):
                    target = (bid, shift, rank)
                    break
            if target is None:
                raise SyncError(
                    f"body {body.uid} moved farther than one block in one "
                    f"step (or left the domain)")
            moves.append((block, body, target))

    bs = BufferSystem(ctx, TAG_MIGRATE)
    bs.schedule_receives(peers)
    buffers = {rank: bs.send_buffer(rank) for rank in peers}
    for block, body, (bid, shift, rank) in moves:
        block.data[key].remove(body.uid)
        if any(shift):
            body.position = body.position - np.array(shift, dtype=np.float64) * extents
        if rank == me:
            body.owner_rank = me
            forest.blocks[bid].data[key].add(body)
        else:
            buf = buffers[rank]
            _pack_block_id(buf, bid, forest.d)
            pack_body(buf, body)
    bs.send_all()

    def _unpack_migrated(src, buf):
        while not buf.at_end:
            bid = _unpack_block_id(buf, forest.d)
            body = unpack_body(buf, owner_rank=me)
            block = forest.blocks.get(bid)
            if block is None:
                raise SyncError(f"body {body.uid} migrated to non-local block {bid}")
            block.data[key].add(body)

    bs.wait_and_unpack(_unpack_migrated)

    bs2 = BufferSystem(ctx, TAG_BODY_GHOSTS)
    bs2.schedule_receives(peers)
    buffers = {rank: bs2.send_buffer(rank) for rank in peers}
    copies = []
    for block in forest.local_blocks():
        for body in block.data[key].local():
            reach = body.bounding_radius + threshold
            for bid, shift, rank in _neighbor_images(block):
                abox = _shifted_aabb(forest, bid, shift, extents)
                if not _sphere_overlaps(abox, body.position, reach):
                    continue
                if bid == block.id:
                    raise SyncError(
                        f"body {body.uid} overlaps its own periodic image; "
                        f"the domain is too small for its size")
                if rank == me:
                    copies.append((bid, shift, body))
                else:
                    buf = buffers[rank]
                    _pack_block_id(buf, bid, forest.d)
                    buf.pack_ints(shift)
                    pack_body(buf, body)
    for bid, shift, body in copies:
        _add_ghost(forest, key, bid, _ghost_copy(body, shift, extents, me))
    bs2.send_all()

    def _unpack_ghosts(src, buf):
        while not buf.at_end:
            bid = _unpack_block_id(buf, forest.d)
            shift = tuple(buf.unpack_ints())
            body = unpack_body(buf, classification=GHOST, owner_rank=src)
            if any(shift):
                body.position = body.position - np.array(shift, dtype=np.float64) * extents
            body._image = shift
            _add_ghost(forest, key, bid, body)

    bs2.wait_and_unpack(_unpack_ghosts)


def _add_ghost(forest, key, bid, ghost):
    block = forest.blocks.get(bid)
    if block is None:
        raise SyncError(f"ghost of body {ghost.uid} targets non-local block {bid}")
    storage = block.data[key]
    if ghost.uid in storage:
        raise SyncError(
            f"two images of body {ghost.uid} meet in one block; the domain "
            f"is too small for its size")
    storage.add(ghost)


def time_step(forest, model, dt, *, gravity=(0.0, 0.0, 0.0),
              scheme="VelocityVerlet", method="HashGrids", key="bodies"):
    """One DEM step: detect, resolve, reduce, integrate, synchronize.

    Returns the number of contacts this rank resolved.
    """
    contacts = detect_contacts(forest, key=key, method=method)
    resolve_contacts_dem(forest, contacts, model, dt, key=key)
    reduce_forces(forest, key=key)
    integrate(forest, scheme, dt, gravity=gravity, key=key)
    sync_bodies(forest, key=key)
    return len(contacts)


def validate_storage(forest, *, key="bodies"):
    """Collective invariant check, raising SyncError on the first violation:
    every Local center inside its block, every uid Local exactly once, and
    every ghost bitwise equal to its master (after the image shift).

    Returns the ownership census {uid: [owner rank]}.
    """
    for block in forest.local_blocks():
        box = forest.block_aabb(block.id)
        for body in block.data[key].local():
            if not _contains(box, body.position):
                raise SyncError(
                    f"local body {body.uid} center {tuple(body.position)} "
                    f"outside its block")
    census = ownership_census(forest, key)
    for uid in sorted(census):
        if len(census[uid]) != 1:
            raise SyncError(f"body {uid} is Local on ranks {census[uid]}")

    mine = {b.uid: (tuple(b.position), b.orientation.tobytes(),
                    b.linear_velocity.tobytes(), b.angular_velocity.tobytes())
            for block in forest.local_blocks()
            for b in block.data[key].local()}
    gathered = forest.ctx.all_gather(mine)
    masters = {}
    for rank in sorted(gathered):
        masters.update(gathered[rank])
    extents = _domain_extents(forest)
    for block in forest.local_blocks():
        for ghost in block.data[key].ghosts():
            pos, quat, lin, ang = masters[ghost.uid]
            expect = np.array(pos)
            if any(ghost._image):
                expect = expect - np.array(ghost._image, dtype=np.float64) * extents
            if (ghost.position.tobytes() != expect.tobytes()
                    or ghost.orientation.tobytes() != quat
                    or ghost.linear_velocity.tobytes() != lin
                    or ghost.angular_velocity.tobytes() != ang):
                raise SyncError(f"ghost of body {ghost.uid} is stale")
    return census
