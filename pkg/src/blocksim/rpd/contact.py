"""Contact detection and DEM resolution.

Broad phase candidates come from either a single uniform grid (LinkedCells)
or a hierarchy of grids with power-of-two cell sizes (HashGrids); both
return a superset of the pairs whose bounding spheres, inflated by the
contact threshold, overlap, plus every (finite body, global body) pair.
Grid cells are dictionary keys built from integer cell coordinates, so the
grids cover unbounded space and shifted periodic images need no wrapping.

Each rank resolves exactly the contacts whose midpoint falls inside one of
its blocks (half-open boxes tile the domain, so every contact has one
owner). Forces for bodies owned elsewhere are shipped per contact and
folded in contact-key order on the owner, which makes the accumulated sums
independent of how blocks are distributed over ranks.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from ..errors import SyncError, ValidationError
from ..runtime.buffersystem import BufferSystem
from .body import GLOBAL
from .storage import _handler, local_bodies

TAG_FORCES = 130

BROAD_PHASE_METHODS = ("LinkedCells", "HashGrids")

# offsets with a positive leading nonzero component: each unordered cell
# pair is visited from exactly one side
_HALF = tuple((dx, dy, dz)
              for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
              if (dz, dy, dx) > (0, 0, 0))
_FULL = tuple((dx, dy, dz)
              for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1))


class Contact(NamedTuple):
    a: object
    b: object
    point: np.ndarray
    normal: np.ndarray
    depth: float
    degenerate: bool = False


def _cell_of(position, size):
    return (int(math.floor(position[0] / size)),
            int(math.floor(position[1] / size)),
            int(math.floor(position[2] / size)))


def _grid_pairs(cells, out):
    """Same-cell pairs plus the half neighborhood of every occupied cell."""
    for cell in sorted(cells):
        bodies = cells[cell]
        for i in range(len(bodies)):
            for j in range(i + 1, len(bodies)):
                out.append((bodies[i], bodies[j]))
        for off in _HALF:
            other = cells.get((cell[0] + off[0], cell[1] + off[1],
                               cell[2] + off[2]))
            if other:
                out.extend((x, y) for x in bodies for y in other)


class HierarchicalHashGrid:
    """Uniform grids with cell sizes base * 2^k; a body sits on the smallest
    level whose cell holds its inflated diameter, so same-level partners are
    always within one cell and smaller bodies probe coarser levels."""

    def __init__(self, base_cell):
        if not base_cell > 0:
            raise ValidationError(f"base cell must be positive, got {base_cell}")
        self.base_cell = float(base_cell)
        self.levels = {}

    def cell_size(self, level):
        return self.base_cell * (1 << level)

    def insert(self, body, search_radius):
        level = 0
        while self.cell_size(level) < 2.0 * search_radius:
            level += 1
        size = self.cell_size(level)
        cells = self.levels.setdefault(level, {})
        cells.setdefault(_cell_of(body.position, size), []).append(body)
        return level

    def candidate_pairs(self):
        out = []
        order = sorted(self.levels)
        for i, level in enumerate(order):
            cells = self.levels[level]
            _grid_pairs(cells, out)
            for coarser in order[i + 1:]:
                size = self.cell_size(coarser)
                target = self.levels[coarser]
                for cell in sorted(cells):
                    for body in cells[cell]:
                        cx, cy, cz = _cell_of(body.position, size)
                        for off in _FULL:
                            other = target.get((cx + off[0], cy + off[1],
                                                cz + off[2]))
                            if other:
                                out.extend((body, o) for o in other)
        return out


def _linked_cells_pairs(bodies, threshold):
    size = max(2.0 * (b.bounding_radius + threshold) for b in bodies)
    cells = {}
    for body in bodies:
        cells.setdefault(_cell_of(body.position, size), []).append(body)
    out = []
    _grid_pairs(cells, out)
    return out


def _rank_population(forest, key):
    """Finite bodies this rank sees, one entry per (uid, periodic image):
    Local masters win over same-image ghost copies held on sibling blocks."""
    finite = []
    seen = set()
    for block in forest.local_blocks():
        for body in block.data[key].local():
            seen.add((body.uid, body._image))
            finite.append(body)
    for block in forest.local_blocks():
        for body in block.data[key].ghosts():
            tag = (body.uid, body._image)
            if tag not in seen:
                seen.add(tag)
                finite.append(body)
    finite.sort(key=lambda b: (b.uid, b._image))
    return finite


def broad_phase(forest, *, key="bodies", method="HashGrids"):
    """Candidate pairs among this rank's bodies, ordered by uid pair."""
    if method not in BROAD_PHASE_METHODS:
        raise ValidationError(
            f"broad phase method must be one of {BROAD_PHASE_METHODS}, got {method!r}")
    handler = _handler(forest, key)
    threshold = handler.contact_threshold
    finite = _rank_population(forest, key)
    if not finite:
        raw = []
    elif method == "HashGrids":
        grid = HierarchicalHashGrid(
            min(2.0 * (b.bounding_radius + threshold) for b in finite))
        for body in finite:
            grid.insert(body, body.bounding_radius + threshold)
        raw = grid.candidate_pairs()
    else:
        raw = _linked_cells_pairs(finite, threshold)
    unique = {}
    for a, b in raw:
        if a.uid == b.uid:
            continue                      # body against its own periodic image
        if b.uid < a.uid:
            a, b = b, a
        unique.setdefault((a.uid, b.uid), (a, b))
    pairs = [unique[k] for k in sorted(unique)]
    for plane in sorted(handler.global_bodies, key=lambda g: g.uid):
        pairs.extend((body, plane) for body in finite)
    return pairs


def _sphere_sphere(a, b):
    delta = b.position - a.position
    dist = math.sqrt(float(np.dot(delta, delta)))
    r1 = a.shape.radius
    r2 = b.shape.radius
    if dist == 0.0:
        return Contact(a, b, a.position.copy(), np.array([0.0, 0.0, 1.0]),
                       r1 + r2, degenerate=True)
    depth = r1 + r2 - dist
    if depth <= 0.0:
        return None
    normal = delta / dist
    return Contact(a, b, a.position + normal * (r1 - 0.5 * depth),
                   normal, depth)


def _sphere_halfspace(plane, sphere):
    n = plane.shape.normal
    height = float(np.dot(n, sphere.position)) - plane.shape.offset
    depth = sphere.shape.radius - height
    if depth <= 0.0:
        return None
    point = sphere.position - n * (height + 0.5 * depth)
    return Contact(plane, sphere, point, n.copy(), depth)


def narrow_phase(a, b):
    """Contact between two bodies, or None when they do not overlap.

    Sphere-sphere contacts keep the given order with the normal pointing
    from a to b; sphere-halfspace contacts are reported as (plane, sphere)
    with the plane normal, matching that convention. Exactly touching
    shapes produce no contact.
    """
    ka = a.shape.kind
    kb = b.shape.kind
    if ka == "sphere" and kb == "sphere":
        return _sphere_sphere(a, b)
    if ka == "sphere" and kb == "halfspace":
        return _sphere_halfspace(b, a)
    if ka == "halfspace" and kb == "sphere":
        return _sphere_halfspace(a, b)
    raise ValidationError(f"unsupported shape pair {ka}-{kb}")


def _owns_point(forest, boxes, point):
    """True when the point, wrapped into the domain, lies in a local block."""
    x0, y0, z0, x1, y1, z1 = forest.domain
    lo = (x0, y0, z0)
    hi = (x1, y1, z1)
    q = [float(point[0]), float(point[1]), float(point[2])]
    for a in range(3):
        if forest.periodic[a] and not (lo[a] <= q[a] < hi[a]):
            ext = hi[a] - lo[a]
            v = math.fmod(q[a] - lo[a], ext)
            if v < 0.0:
                v += ext
            q[a] = lo[a] + v
        if q[a] < lo[a]:
            q[a] = lo[a]
        elif q[a] >= hi[a]:
            q[a] = np.nextafter(hi[a], lo[a])
    return any(b[0] <= q[0] < b[3] and b[1] <= q[1] < b[4]
               and b[2] <= q[2] < b[5] for b in boxes)


def detect_contacts(forest, *, key="bodies", method="HashGrids"):
    """Contacts between this rank's bodies whose midpoint this rank owns."""
    boxes = [forest.block_aabb(b.id) for b in forest.local_blocks()]
    contacts = []
    for a, b in broad_phase(forest, key=key, method=method):
        c = narrow_phase(a, b)
        if c is not None and _owns_point(forest, boxes, c.point):
            contacts.append(c)
    return contacts


def _route(handler, body, ckey, force, torque):
    if body.classification == GLOBAL:
        # replicated and never integrated: reactions stay local bookkeeping
        body.force += force
        body.torque += torque
    else:
        handler.pending.append((body.owner_rank, body.uid, ckey[0], ckey[1],
                                force, torque))


def resolve_contacts_dem(forest, contacts, model, dt, *, key="bodies"):
    """Spring-dashpot forces for every contact, queued per owning body.

    Normal force (k_n depth - gamma_n v_n) n is clamped to be repulsive.
    With friction, a per-contact tangential spring integrates the slip
    velocity while the contact lasts and is capped by the Coulomb cone
    |F_t| <= mu F_n (the spring is shortened to the cap when sliding).
    """
    handler = _handler(forest, key)
    fresh = {}
    for c in contacts:
        a, b = c.a, c.b
        n = c.normal
        ckey = (a.uid, b.uid) if a.uid < b.uid else (b.uid, a.uid)
        v_rel = b.velocity_at(c.point) - a.velocity_at(c.point)
        vn = float(np.dot(v_rel, n))
        fn = model.k_n * c.depth - model.gamma_n * vn
        if fn < 0.0:
            fn = 0.0
        force = fn * n
        if model.mu > 0.0:
            vt = v_rel - vn * n
            xi = handler.tangent.get(ckey)
            xi = np.zeros(3) if xi is None else xi - float(np.dot(xi, n)) * n
            xi = xi + vt * dt
            ft = -model.k_t * xi - model.gamma_t * vt
            mag = math.sqrt(float(np.dot(ft, ft)))
            cap = model.mu * fn
            if mag > cap:
                ft = ft * (cap / mag) if mag > 0.0 else ft * 0.0
                if model.k_t > 0.0:
                    xi = -ft / model.k_t
            fresh[ckey] = xi
            force = force + ft
        _route(handler, a, ckey, -force,
               np.cross(c.point - a.position, -force))
        _route(handler, b, ckey, force,
               np.cross(c.point - b.position, force))
    handler.tangent = fresh


def reduce_forces(forest, *, key="bodies"):
    """Collective: flush queued contact forces to the owning bodies.

    Every contribution travels as its own (contact key, force, torque)
    record; owners fold records in contact-key order, so the resulting
    accumulator values do not depend on the block-to-rank assignment.
    """
    ctx = forest.ctx
    handler = _handler(forest, key)
    pending = handler.pending
    handler.pending = []
    peers = forest.neighbor_ranks()
    bs = BufferSystem(ctx, TAG_FORCES)
    bs.schedule_receives(peers)
    buffers = {rank: bs.send_buffer(rank) for rank in peers}
    entries = {}
    for owner, uid, k0, k1, force, torque in pending:
        if owner == ctx.rank:
            entries.setdefault(uid, []).append((k0, k1, force, torque))
            continue
        buf = buffers.get(owner)
        if buf is None:
            raise SyncError(f"force for body {uid} owned by non-neighbor rank {owner}")
        buf.pack_int(uid)
        buf.pack_int(k0)
        buf.pack_int(k1)
        buf.pack_floats(force)
        buf.pack_floats(torque)
    bs.send_all()

    def _unpack(src, buf):
        while not buf.at_end:
            uid = buf.unpack_int()
            k0 = buf.unpack_int()
            k1 = buf.unpack_int()
            force = np.array(buf.unpack_floats())
            torque = np.array(buf.unpack_floats())
            entries.setdefault(uid, []).append((k0, k1, force, torque))

    bs.wait_and_unpack(_unpack)
    if not entries:
        return
    owned = {body.uid: body for body in local_bodies(forest, key)}
    for uid in sorted(entries):
        body = owned.get(uid)
        if body is None:
            raise SyncError(f"contact force for body {uid}, which is not local here")
        for _, _, force, torque in sorted(entries[uid], key=lambda e: (e[0], e[1])):
            body.force += force
            body.torque += torque
