"""Adaptive refinement and coarsening of the block forest.

`adapt` runs the full cycle collectively:

1. mark resolution: a distributed fixpoint turns per-block marks (-1/0/+1)
   into target levels that respect 2:1 balance and sibling unanimity,
2. local restructure: splits happen in place, merge families gather their
   payloads on the owner of child 0,
3. placement: an optional balance callback reassigns the future blocks,
4. migration and neighborhood rebuild.

Marks only move a block one level per cycle; the resolved targets stay within
one level of the current one as well, because current neighbors are within
one level (2:1) and raising never pushes a target above neighbor level + 1.

Data handlers drive what happens to block payloads. A handler must provide
`create/serialize/deserialize` and, if the forest adapts, `on_refine(forest,
parent_block, value, child_block) -> child value` plus `on_coarsen(forest,
parent_block, child_values) -> value` (children in octant order). An optional
`census(forest, block, value) -> dict` feeds workload models.
"""
from __future__ import annotations

from ..errors import TopologyError, ValidationError
from ..runtime.buffers import RecvBuffer
from ..runtime.buffersystem import BufferSystem
from .. import balance as _balance
from .blockid import BlockId
from .forest import Block

TAG_AMR_TARGETS = 101
TAG_AMR_MERGE = 102
TAG_AMR_MIGRATE = 103

_ZERO_SHIFT = (0, 0, 0)


def _pack_bid(buf, bid: BlockId, d: int) -> None:
    buf.pack_int(bid.root)
    buf.pack_int(bid.level)
    buf.pack_int(bid.path_bits(d))


def _unpack_bid(buf, d: int) -> BlockId:
    root = buf.unpack_int()
    level = buf.unpack_int()
    bits = buf.unpack_int()
    return BlockId.from_path_bits(root, level, bits, d)


def resolve_marks(forest, marks) -> dict:
    """Collectively turn refine/coarsen marks into per-block target levels.

    Returns {block id: target level} for local blocks. Iterates neighbor
    exchanges until no rank changes a target: targets rise to stay within one
    level of every neighbor's target, and a block only keeps a coarsening
    target if all of its siblings are same-level leaves that coarsen too.
    """
    ctx = forest.ctx
    targets = {}
    for block in forest.local_blocks():
        mark = marks.get(block.id, 0)
        if mark not in (-1, 0, 1):
            raise ValidationError(f"mark for {block.id} must be -1, 0 or 1, got {mark}")
        level = block.level
        if mark > 0 and level >= forest.max_level:
            raise TopologyError(f"{block.id} is already at max level {forest.max_level}")
        targets[block.id] = max(level + mark, 0)
    for bid in marks:
        if bid not in targets:
            raise ValidationError(f"mark given for non-local block {bid}")

    nbr_ranks = forest.neighbor_ranks()
    bs = BufferSystem(ctx, TAG_AMR_TARGETS)
    nbr_targets = {}
    iterations = 0
    while True:
        iterations += 1
        if iterations > 10_000:
            raise TopologyError("mark resolution failed to converge")
        bs.schedule_receives(nbr_ranks)
        for rank in nbr_ranks:
            buf = bs.send_buffer(rank)
            buf.pack_int(len(targets))
            for bid in sorted(targets):
                _pack_bid(buf, bid, forest.d)
                buf.pack_int(targets[bid])
        bs.send_all()

        def _store(src, buf):
            for _ in range(buf.unpack_int()):
                bid = _unpack_bid(buf, forest.d)
                nbr_targets[bid] = buf.unpack_int()

        bs.wait_and_unpack(_store)

        def _target_of(bid):
            t = targets.get(bid)
            return nbr_targets[bid] if t is None else t

        known = set(targets)
        known.update(nbr_targets)
        changed = 0
        for block in forest.local_blocks():
            level = block.level
            t = targets[block.id]
            for rec in block.neighbors:
                t = max(t, _target_of(rec.block_id) - 1)
            if t < level:
                siblings = block.id.siblings(forest.n_children)
                unanimous = all(
                    s in known and _target_of(s) < level for s in siblings)
                if not unanimous:
                    t = level
            if t != targets[block.id]:
                targets[block.id] = t
                changed += 1
        if ctx.all_reduce(float(changed), op="sum") == 0.0:
            break
    return targets


def _sibling_owner(forest, block, sibling: BlockId):
    """Rank owning a same-level sibling leaf of `block` (records or local)."""
    if sibling in forest.blocks:
        return forest.ctx.rank
    for rec in block.neighbors:
        if rec.block_id == sibling and rec.shift == _ZERO_SHIFT:
            return rec.rank
    raise TopologyError(f"sibling {sibling} of {block.id} is not a leaf")


def _split(forest, block):
    """Refine one block locally; returns the child blocks in octant order."""
    children = []
    for octant in range(forest.n_children):
        child = Block(block.id.child(octant))
        for key in sorted(block.data):
            handler = forest.handlers[key]
            on_refine = getattr(handler, "on_refine", None)
            if on_refine is None:
                raise ValidationError(f"data slot {key!r} cannot be refined")
            child.data[key] = on_refine(forest, block, block.data[key], child)
        children.append(child)
    return children


def _merge(forest, parent_id: BlockId, parts) -> Block:
    """Build the parent block from its children.

    `parts[octant]` is either a local child Block or a serialized slot list
    [(key, bytes)] received from the child's owner.
    """
    parent = Block(parent_id)
    values = {}
    for octant in range(forest.n_children):
        part = parts[octant]
        child_id = parent_id.child(octant)
        if isinstance(part, Block):
            for key, value in part.data.items():
                values.setdefault(key, [None] * forest.n_children)[octant] = value
        else:
            shell = Block(child_id)
            for key, blob in part:
                handler = forest.handlers[key]
                value = handler.deserialize(forest, shell, RecvBuffer(blob, debug=False))
                values.setdefault(key, [None] * forest.n_children)[octant] = value
    for key in sorted(values):
        handler = forest.handlers[key]
        on_coarsen = getattr(handler, "on_coarsen", None)
        if on_coarsen is None:
            raise ValidationError(f"data slot {key!r} cannot be coarsened")
        parent.data[key] = on_coarsen(forest, parent, values[key])
    return parent


def _census(forest, block) -> dict:
    info = {"particles": 0, "ghost_particles": 0, "contacts": 0}
    if forest.cells_per_block is not None:
        cb = forest.cells_per_block
        info["cells"] = cb[0] * cb[1] * cb[2]
    for key in sorted(block.data):
        census = getattr(forest.handlers[key], "census", None)
        if census is None:
            continue
        for name, count in census(forest, block, block.data[key]).items():
            info[name] = info.get(name, 0) + count
    return info


def adapt(forest, marks, balance_fn=None) -> list:
    """Collective refine/coarsen/rebalance cycle.

    `marks` maps local block ids to -1 (coarsen), 0 or +1 (refine).
    `balance_fn(forest, entries)`, if given, sees the post-adaptation forest
    as [(block id, current owner, info dict)] sorted by id (identical on all
    ranks) and returns {block id: new owner} for the blocks it moves.
    Returns this rank's outgoing migrations as [(block id, from, to)].
    """
    ctx = forest.ctx
    targets = resolve_marks(forest, marks)

    # local restructure; merge payloads travel to the owner of child 0
    future = {}
    pending = {}
    merge_sends = {}
    merge_senders = set()
    for block in forest.local_blocks():
        t = targets[block.id]
        level = block.level
        if t == level:
            future[block.id] = block
        elif t > level:
            for child in _split(forest, block):
                future[child.id] = child
        else:
            parent_id = block.id.parent()
            child0 = parent_id.child(0)
            owner0 = ctx.rank if block.id == child0 else _sibling_owner(forest, block, child0)
            octant = block.id.path[-1]
            if owner0 == ctx.rank:
                pending.setdefault(parent_id, {})[octant] = block
            else:
                merge_sends.setdefault(owner0, []).append((block.id, octant, block))
            if block.id == child0:
                for sibling in block.id.siblings(forest.n_children)[1:]:
                    owner = _sibling_owner(forest, block, sibling)
                    if owner != ctx.rank:
                        merge_senders.add(owner)

    bs = BufferSystem(ctx, TAG_AMR_MERGE)
    bs.schedule_receives(sorted(merge_senders))
    for rank in sorted(merge_sends):
        buf = bs.send_buffer(rank)
        entries = sorted(merge_sends[rank], key=lambda e: e[0])
        buf.pack_int(len(entries))
        for bid, octant, block in entries:
            _pack_bid(buf, bid, forest.d)
            slots = forest.serialize_block_data(block)
            buf.pack_int(len(slots))
            for key, blob in slots:
                buf.pack_str(key)
                buf.pack_bytes(blob)
    bs.send_all()

    def _recv_merge(src, buf):
        for _ in range(buf.unpack_int()):
            bid = _unpack_bid(buf, forest.d)
            slots = []
            for _ in range(buf.unpack_int()):
                key = buf.unpack_str()
                slots.append((key, buf.unpack_bytes()))
            pending.setdefault(bid.parent(), {})[bid.path[-1]] = slots

    bs.wait_and_unpack(_recv_merge)

    for parent_id in sorted(pending):
        parts = pending[parent_id]
        if len(parts) != forest.n_children:
            raise TopologyError(
                f"merge family {parent_id} incomplete: got octants {sorted(parts)}")
        future[parent_id] = _merge(forest, parent_id, parts)

    # placement: gather the future forest, decide owners, migrate
    local_entries = []
    for bid in sorted(future):
        local_entries.append((bid.root, bid.level, bid.path_bits(forest.d),
                              _census(forest, future[bid])))
    gathered = ctx.all_gather(local_entries)
    entries = []
    for rank in sorted(gathered):
        for root, level, bits, info in gathered[rank]:
            entries.append((BlockId.from_path_bits(root, level, bits, forest.d), rank, info))
    entries.sort(key=lambda e: e[0])

    moves = balance_fn(forest, entries) if balance_fn is not None else {}
    owner_map = {}
    for bid, owner, _ in entries:
        owner_map[bid] = moves.get(bid, owner)

    outgoing = {}
    migrations = []
    expected = set()
    for bid, owner, _ in entries:
        new_owner = owner_map[bid]
        if owner == ctx.rank and new_owner != ctx.rank:
            outgoing.setdefault(new_owner, []).append(bid)
            migrations.append((bid, ctx.rank, new_owner))
        elif new_owner == ctx.rank and owner != ctx.rank:
            expected.add(owner)

    bs = BufferSystem(ctx, TAG_AMR_MIGRATE)
    bs.schedule_receives(sorted(expected))
    for rank in sorted(outgoing):
        buf = bs.send_buffer(rank)
        buf.pack_int(len(outgoing[rank]))
        for bid in outgoing[rank]:
            _pack_bid(buf, bid, forest.d)
            slots = forest.serialize_block_data(future.pop(bid))
            buf.pack_int(len(slots))
            for key, blob in slots:
                buf.pack_str(key)
                buf.pack_bytes(blob)
    bs.send_all()

    def _recv_block(src, buf):
        for _ in range(buf.unpack_int()):
            bid = _unpack_bid(buf, forest.d)
            block = Block(bid)
            slots = []
            for _ in range(buf.unpack_int()):
                key = buf.unpack_str()
                slots.append((key, buf.unpack_bytes()))
            forest.deserialize_block_data(block, slots)
            future[bid] = block

    bs.wait_and_unpack(_recv_block)

    forest.blocks = future
    forest.rebuild_neighborhoods(owner_map)
    return migrations


def refine_block(forest, bid: BlockId, balance_fn=None) -> list:
    """Collective: split one local block (empty marks elsewhere)."""
    return adapt(forest, {bid: 1} if bid in forest.blocks else {}, balance_fn)


def coarsen_block(forest, bid: BlockId, balance_fn=None) -> list:
    """Collective: merge one local block's family into its parent."""
    if bid in forest.blocks and bid.level == 0:
        raise TopologyError(f"cannot coarsen root block {bid}")
    return adapt(forest, {bid: -1} if bid in forest.blocks else {}, balance_fn)


def make_curve_balancer(curve: str = "morton", model: str = "blockCount",
                        *, alpha: float = 10.0, custom_fn=None):
    """Balance callback ordering blocks along a space-filling curve.

    Weights come from the workload `model`; segments of the curve go to
    consecutive ranks. Deterministic, so every rank computes the same map.
    """

    def balance_fn(forest, entries):
        infos = [info for _, _, info in entries]
        weights, _ = _balance.estimate_weights(infos, model, alpha=alpha,
                                               custom_fn=custom_fn)
        indexed = [(forest.block_coords(bid), bid.level, i)
                   for i, (bid, _, _) in enumerate(entries)]
        order = _balance.sort_blocks(indexed, curve, forest.d)
        ranks = _balance.partition_curve([weights[i] for i in order], forest.ctx.n_ranks)
        return {entries[i][0]: rank for i, rank in zip(order, ranks)}

    return balance_fn
