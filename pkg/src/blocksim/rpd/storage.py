"""Block-owned body storage and its forest data handler.

Each block holds one BodyStorage: the bodies whose centers lie inside the
block (Local) plus shadow copies of nearby bodies owned elsewhere (Ghost).
A uid appears at most once per storage. Infinite bodies are not block data;
they live in a per-rank replicated list on the handler, identical on every
rank because all additions are collective.

Serialization covers Local bodies only: ghosts are derived state and are
rebuilt by the next synchronization, which also makes refined, coarsened,
migrated, or recovered blocks whole again.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import ValidationError
from .body import (GHOST, GLOBAL, LOCAL, HalfSpace, RigidBody, Sphere,
                   rotation_matrix)


class BodyStorage:
    __slots__ = ("bodies",)

    def __init__(self):
        self.bodies = {}

    def add(self, body):
        if body.uid in self.bodies:
            raise ValidationError(f"uid {body.uid} already stored on this block")
        self.bodies[body.uid] = body

    def remove(self, uid):
        return self.bodies.pop(uid)

    def get(self, uid):
        return self.bodies.get(uid)

    def local(self):
        return [self.bodies[u] for u in sorted(self.bodies)
                if self.bodies[u].classification == LOCAL]

    def ghosts(self):
        return [self.bodies[u] for u in sorted(self.bodies)
                if self.bodies[u].classification == GHOST]

    def clear_ghosts(self):
        for uid in [u for u, b in self.bodies.items()
                    if b.classification == GHOST]:
            del self.bodies[uid]

    def __contains__(self, uid):
        return uid in self.bodies

    def __len__(self):
        return len(self.bodies)


def pack_body(buf, body):
    buf.pack_int(body.uid)
    if body.shape.kind == "sphere":
        buf.pack_int(0)
        buf.pack_float(body.shape.radius)
    else:
        buf.pack_int(1)
        buf.pack_floats(body.shape.normal)
        buf.pack_float(body.shape.offset)
    buf.pack_float(body.mass)
    buf.pack_floats(body.position)
    buf.pack_floats(body.orientation)
    buf.pack_floats(body.linear_velocity)
    buf.pack_floats(body.angular_velocity)
    buf.pack_floats(body.hydrodynamic_force)
    buf.pack_floats(body.hydrodynamic_torque)
    buf.pack_floats(body._accel)
    buf.pack_floats(body._ang_accel)
    buf.pack_bool(body._kicked)


def unpack_body(buf, *, classification=LOCAL, owner_rank=0):
    uid = buf.unpack_int()
    kind = buf.unpack_int()
    if kind == 0:
        shape = Sphere(buf.unpack_float())
    else:
        shape = HalfSpace(buf.unpack_floats(), buf.unpack_float())
    mass = buf.unpack_float()
    body = RigidBody(uid, shape, buf.unpack_floats(),
                     orientation=buf.unpack_floats(),
                     linear_velocity=buf.unpack_floats(),
                     angular_velocity=buf.unpack_floats(),
                     mass=None if kind else mass,
                     classification=classification, owner_rank=owner_rank)
    body.hydrodynamic_force = np.array(buf.unpack_floats())
    body.hydrodynamic_torque = np.array(buf.unpack_floats())
    body._accel = np.array(buf.unpack_floats())
    body._ang_accel = np.array(buf.unpack_floats())
    body._kicked = buf.unpack_bool()
    return body


def _contains(aabb, p):
    """Half-open block box: lower faces inclusive, upper faces exclusive."""
    return (aabb[0] <= p[0] < aabb[3] and aabb[1] <= p[1] < aabb[4]
            and aabb[2] <= p[2] < aabb[5])


class BodyStorageHandler:
    """Forest data handler plus the rank-replicated global body list and the
    transient per-rank bookkeeping of the contact pipeline."""

    def __init__(self, contact_threshold=None):
        if contact_threshold is not None and not contact_threshold >= 0:
            raise ValidationError(
                f"contact threshold must be >= 0, got {contact_threshold}")
        self.fixed_threshold = contact_threshold
        self.auto_threshold = 0.0
        self.global_bodies = []
        self.pending = []         # (owner_rank, uid, key0, key1, force, torque)
        self.tangent = {}         # (uid, uid) -> tangential spring displacement

    @property
    def contact_threshold(self):
        if self.fixed_threshold is not None:
            return self.fixed_threshold
        return self.auto_threshold

    def create(self, forest, block):
        return BodyStorage()

    def serialize(self, forest, block, storage, buf):
        bodies = storage.local()
        buf.pack_int(len(bodies))
        for body in bodies:
            pack_body(buf, body)

    def deserialize(self, forest, block, buf):
        storage = BodyStorage()
        for _ in range(buf.unpack_int()):
            storage.add(unpack_body(buf, owner_rank=forest.ctx.rank))
        return storage

    def on_refine(self, forest, parent, storage, child):
        out = BodyStorage()
        box = forest.block_aabb(child.id)
        for body in storage.local():
            if _contains(box, body.position):
                out.add(body)
        return out

    def on_coarsen(self, forest, parent, child_storages):
        out = BodyStorage()
        for st in child_storages:
            for body in st.local():
                out.add(body)
        return out


def register_bodies(forest, key="bodies", *, contact_threshold=None):
    """Collective: attach a body storage slot to every block."""
    forest.register_data(key, BodyStorageHandler(contact_threshold))
    return key


def _handler(forest, key):
    handler = forest.handlers.get(key)
    if not isinstance(handler, BodyStorageHandler):
        raise ValidationError(f"slot {key!r} is not a body storage")
    return handler


def _next_uid(forest, key):
    handler = _handler(forest, key)
    top = -1
    for block in forest.local_blocks():
        for uid in block.data[key].bodies:
            top = max(top, uid)
    for body in handler.global_bodies:
        top = max(top, body.uid)
    return int(forest.ctx.all_reduce((top,), "max")[0]) + 1


def _refresh_threshold(forest, key):
    handler = _handler(forest, key)
    smallest = math.inf
    for block in forest.local_blocks():
        for body in block.data[key].local():
            smallest = min(smallest, body.bounding_radius)
    smallest = forest.ctx.all_reduce((smallest,), "min")[0]
    handler.auto_threshold = 0.1 * smallest if math.isfinite(smallest) else 0.0


def add_sphere(forest, position, radius, *, key="bodies", mass=None,
               density=None, velocity=(0.0, 0.0, 0.0),
               angular_velocity=(0.0, 0.0, 0.0),
               orientation=(1.0, 0.0, 0.0, 0.0)):
    """Collective: store a sphere on the block containing its center and
    return its uid (the same on every rank)."""
    if (mass is None) == (density is None):
        raise ValidationError("give exactly one of mass or density")
    shape = Sphere(radius)
    if density is not None:
        if not float(density) > 0:
            raise ValidationError(f"density must be positive, got {density}")
        mass = float(density) * 4.0 / 3.0 * math.pi * shape.radius ** 3
    uid = _next_uid(forest, key)
    mine = 0
    for block in forest.local_blocks():
        if _contains(forest.block_aabb(block.id), position):
            block.data[key].add(RigidBody(
                uid, shape, position, orientation=orientation,
                linear_velocity=velocity, angular_velocity=angular_velocity,
                mass=mass, owner_rank=forest.ctx.rank))
            mine = 1
            break
    if int(forest.ctx.all_reduce((mine,), "sum")[0]) != 1:
        raise ValidationError(f"sphere center {tuple(position)} is outside the domain")
    _refresh_threshold(forest, key)
    return uid


def add_halfspace(forest, normal, offset=0.0, *, key="bodies"):
    """Collective: add a replicated infinite plane boundary, returning its uid."""
    handler = _handler(forest, key)
    shape = HalfSpace(normal, offset)
    uid = _next_uid(forest, key)
    handler.global_bodies.append(RigidBody(
        uid, shape, shape.normal * shape.offset,
        classification=GLOBAL, owner_rank=-1))
    return uid


def local_bodies(forest, key="bodies"):
    """This rank's Local bodies in ascending uid order."""
    out = []
    for block in forest.local_blocks():
        out.extend(block.data[key].local())
    out.sort(key=lambda b: b.uid)
    return out


def ghost_bodies(forest, key="bodies"):
    out = []
    for block in forest.local_blocks():
        out.extend(block.data[key].ghosts())
    return out


def global_bodies(forest, key="bodies"):
    return list(_handler(forest, key).global_bodies)


def find_body(forest, uid, key="bodies"):
    """The Local instance of `uid` on this rank, or None."""
    for block in forest.local_blocks():
        body = block.data[key].get(uid)
        if body is not None and body.classification == LOCAL:
            return body
    return None


def ownership_census(forest, key="bodies"):
    """Collective: {uid: [ranks holding it Local]} over the whole forest."""
    mine = [b.uid for b in local_bodies(forest, key)]
    gathered = forest.ctx.all_gather(mine)
    census = {}
    for rank in sorted(gathered):
        for uid in gathered[rank]:
            census.setdefault(uid, []).append(rank)
    return census


def gather_bodies(forest, key="bodies"):
    """Collective: on rank 0, per-body state snapshots sorted by uid
    (None elsewhere). Finite bodies only."""
    mine = [(b.uid, b.shape.radius, b.mass, tuple(b.position),
             tuple(b.orientation), tuple(b.linear_velocity),
             tuple(b.angular_velocity), b.owner_rank)
            for b in local_bodies(forest, key)]
    gathered = forest.ctx.all_gather(mine)
    if forest.ctx.rank != 0:
        return None
    rows = [row for rank in sorted(gathered) for row in gathered[rank]]
    rows.sort()
    return [{"uid": r[0], "radius": r[1], "mass": r[2],
             "position": np.array(r[3]), "orientation": np.array(r[4]),
             "linear_velocity": np.array(r[5]),
             "angular_velocity": np.array(r[6]), "owner_rank": r[7]}
            for r in rows]


def total_linear_momentum(forest, key="bodies"):
    """Collective: sum of m v over all Local bodies."""
    p = np.zeros(3)
    for body in local_bodies(forest, key):
        p += body.mass * body.linear_velocity
    return np.array(forest.ctx.all_reduce(tuple(p), "sum"))


def total_kinetic_energy(forest, key="bodies"):
    """Collective: translational plus rotational kinetic energy of all
    Local bodies."""
    e = 0.0
    for body in local_bodies(forest, key):
        r = rotation_matrix(body.orientation)
        inertia = r @ body.inertia_body @ r.T
        w = body.angular_velocity
        e += 0.5 * body.mass * float(np.dot(body.linear_velocity,
                                            body.linear_velocity))
        e += 0.5 * float(w @ inertia @ w)
    return forest.ctx.all_reduce((e,), "sum")[0]
