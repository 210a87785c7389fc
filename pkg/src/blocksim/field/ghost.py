"""Ghost-layer exchange between neighboring blocks.

Sender and receiver independently derive the exchanged region from the
neighbor record: the receiver's cell box grown by the exchange width,
intersected with the sender's interior, computed in global cell coordinates
at the finer of the two levels (periodic images are handled by the record's
shift). Leaf images tile the domain, so this intersection is a box and never
reaches into the receiver's own interior. Because both sides compute the
same geometry, messages carry only a small identification header plus the
raw values.

Level transfer across a 2:1 interface follows the sender-restricts rule:
fine-to-coarse data is averaged 2^d-to-1 before packing, coarse-to-fine data
is packed at coarse resolution and expanded piecewise-constant by the
receiver. Integer-valued fields (flag masks) are combined with bitwise OR
instead of averaged.

All exchanges write ghost cells only and read interior cells only, so
delivery order cannot influence the result: a ghost cell has exactly one
writer per exchange.
"""
from __future__ import annotations

import numpy as np

from ..errors import TopologyError, ValidationError
from ..runtime.buffersystem import BufferSystem
from ..blockforest.blockid import BlockId

TAG_GHOST = 110


class GhostPackInfo:
    """Selects one field slot for exchange with a slice width w <= g."""

    __slots__ = ("key", "width")

    def __init__(self, key: str, width=None):
        self.key = key
        self.width = width


def _field_of(value):
    return getattr(value, "field", value)


def _grow(box, w):
    lo, hi = box
    return (tuple(v - w for v in lo), tuple(v + w for v in hi))


def _isect(a, b):
    lo = tuple(max(a[0][i], b[0][i]) for i in range(3))
    hi = tuple(min(a[1][i], b[1][i]) for i in range(3))
    if any(lo[i] >= hi[i] for i in range(3)):
        return None
    return lo, hi


def _lift(box, d):
    f = (2, 2, 2 if d == 3 else 1)
    return (tuple(box[0][a] * f[a] for a in range(3)),
            tuple(box[1][a] * f[a] for a in range(3)))


def _halve(box, d):
    f = (2, 2, 2 if d == 3 else 1)
    return (tuple(box[0][a] // f[a] for a in range(3)),
            tuple(-(-box[1][a] // f[a]) for a in range(3)))


def _cell_box(forest, bid, shift=(0, 0, 0)):
    n = forest.cells_per_block
    c = forest.block_coords(bid)
    ext = forest.level_extent(bid.level)
    lo = tuple((c[a] + shift[a] * ext[a]) * n[a] for a in range(3))
    return lo, tuple(lo[a] + n[a] for a in range(3))


def _view_slice(view, box, origin, g):
    lo, hi = box
    return view[lo[2] - origin[2] + g:hi[2] - origin[2] + g,
                lo[1] - origin[1] + g:hi[1] - origin[1] + g,
                lo[0] - origin[0] + g:hi[0] - origin[0] + g]


def _require_even(forest):
    n = forest.cells_per_block
    axes = (0, 1, 2) if forest.d == 3 else (0, 1)
    if any(n[a] % 2 for a in axes):
        raise ValidationError(
            f"cross-level exchange needs even cells per block, got {n}")


def _average(arr, factors):
    fz, fy, fx = factors[2], factors[1], factors[0]
    nz, ny, nx, nf = arr.shape
    a = arr.reshape(nz // fz, fz, ny // fy, fy, nx // fx, fx, nf)
    if np.issubdtype(arr.dtype, np.integer):
        for axis in (5, 3, 1):
            a = np.bitwise_or.reduce(a, axis=axis)
        return a
    return a.mean(axis=(1, 3, 5))


def _expand(arr, factors):
    out = np.repeat(arr, factors[2], axis=0)
    out = np.repeat(out, factors[1], axis=1)
    return np.repeat(out, factors[0], axis=2)


def _pack_values(forest, block, target, key, w):
    """Array this block contributes to the neighbor's ghost region, or None."""
    nb_id, shift, nb_level = target
    field = _field_of(block.data[key])
    d = forest.d
    factors = (2, 2, 2 if d == 3 else 1)
    s_box = _cell_box(forest, block.id)
    ghost = _grow(_cell_box(forest, nb_id, shift), w)
    if nb_level == block.level:
        o = _isect(ghost, s_box)
        if o is None:
            return None
        return np.ascontiguousarray(_view_slice(field.view, o, s_box[0], field.g))
    if nb_level == block.level + 1:                  # receiver is finer
        _require_even(forest)
        o = _isect(ghost, _lift(s_box, d))
        if o is None:
            return None
        src = _halve(o, d)
        return np.ascontiguousarray(_view_slice(field.view, src, s_box[0], field.g))
    if nb_level == block.level - 1:                  # receiver is coarser
        _require_even(forest)
        o = _isect(_lift(ghost, d), s_box)
        if o is None:
            return None
        fine = _view_slice(field.view, o, s_box[0], field.g)
        return np.ascontiguousarray(_average(fine, factors))
    raise TopologyError(
        f"blocks {block.id} and {nb_id} differ by more than one level")


def _unpack_values(forest, block, target, key, w, data):
    """Write `data` (produced by the matching _pack_values) into my ghosts."""
    s_bid, shift, s_level = target
    field = _field_of(block.data[key])
    d = forest.d
    factors = (2, 2, 2 if d == 3 else 1)
    ghost = _grow(_cell_box(forest, block.id), w)
    s_box = _cell_box(forest, s_bid, shift)
    if s_level == block.level:
        o = _isect(ghost, s_box)
        _view_slice(field.view, o, _cell_box(forest, block.id)[0], field.g)[...] = data
        return
    r_lo = _cell_box(forest, block.id)[0]
    if s_level == block.level - 1:                   # sender is coarser
        o = _isect(ghost, _lift(s_box, d))
        src = _halve(o, d)
        wide = _expand(data, factors)
        off = tuple(o[0][a] - src[0][a] * factors[a] for a in range(3))
        size = tuple(o[1][a] - o[0][a] for a in range(3))
        trimmed = wide[off[2]:off[2] + size[2],
                       off[1]:off[1] + size[1],
                       off[0]:off[0] + size[0]]
        _view_slice(field.view, o, r_lo, field.g)[...] = trimmed
        return
    if s_level == block.level + 1:                   # sender is finer
        o_f = _isect(_lift(ghost, d), s_box)
        o = _halve(o_f, d)
        _view_slice(field.view, o, r_lo, field.g)[...] = data
        return
    raise TopologyError(
        f"blocks {block.id} and {s_bid} differ by more than one level")


def _targets(block):
    """Unique neighbor images: a block can see the same coarser neighbor
    image through several records (face and corner), but each image is
    exchanged once."""
    seen = {}
    for rec in block.neighbors:
        seen[(rec.block_id, rec.shift)] = rec
    return [(bid, shift, seen[(bid, shift)].level, seen[(bid, shift)].rank)
            for bid, shift in sorted(seen)]


def _resolve_infos(forest, infos):
    out = []
    for info in infos:
        if isinstance(info, str):
            info = GhostPackInfo(info)
        width = info.width
        if width is None:
            for block in forest.local_blocks():
                width = _field_of(block.data[info.key]).g
                break
        out.append((info.key, width))
    out.sort()
    return out


def exchange_ghosts(forest, infos, *, tag=TAG_GHOST) -> None:
    """One collective ghost exchange round for the given pack infos.

    `infos` is a list of GhostPackInfo or plain slot keys (width defaults to
    the field's ghost layer count). Same-rank pairs are copied directly;
    everything else travels through one message per rank pair.
    """
    ctx = forest.ctx
    if forest.cells_per_block is None:
        raise ValidationError("forest has no cells_per_block")
    resolved = _resolve_infos(forest, infos)
    for key, width in resolved:
        if width is not None and width < 1:
            raise ValidationError(f"pack width for {key!r} must be >= 1")
    peers = forest.neighbor_ranks()
    bs = BufferSystem(ctx, tag)
    bs.schedule_receives(peers)
    buffers = {rank: bs.send_buffer(rank) for rank in peers}
    for block in forest.local_blocks():
        for nb_id, shift, nb_level, nb_rank in _targets(block):
            payload = [_pack_values(forest, block, (nb_id, shift, nb_level), key, w)
                       for key, w in resolved]
            if all(p is None for p in payload):
                continue
            back = tuple(-v for v in shift)
            if nb_rank == ctx.rank:
                nb_block = forest.blocks[nb_id]
                for (key, w), data in zip(resolved, payload):
                    if data is not None:
                        _unpack_values(forest, nb_block,
                                       (block.id, back, block.level),
                                       key, w, data)
                continue
            buf = buffers[nb_rank]
            buf.pack_int(nb_id.root)
            buf.pack_int(nb_id.level)
            buf.pack_int(nb_id.path_bits(forest.d))
            buf.pack_ints(back)
            buf.pack_int(block.id.root)
            buf.pack_int(block.id.level)
            buf.pack_int(block.id.path_bits(forest.d))
            for data in payload:
                buf.pack_bool(data is not None)
                if data is not None:
                    buf.pack_array(data)
    bs.send_all()

    def _unpack(src, buf):
        while not buf.at_end:
            r_bid = BlockId.from_path_bits(buf.unpack_int(), buf.unpack_int(),
                                           buf.unpack_int(), forest.d)
            shift = tuple(buf.unpack_ints())
            s_bid = BlockId.from_path_bits(buf.unpack_int(), buf.unpack_int(),
                                           buf.unpack_int(), forest.d)
            block = forest.blocks.get(r_bid)
            if block is None:
                raise ValidationError(f"ghost data for non-local block {r_bid}")
            for key, w in resolved:
                if buf.unpack_bool():
                    _unpack_values(forest, block, (s_bid, shift, s_bid.level),
                                   key, w, buf.unpack_array())

    bs.wait_and_unpack(_unpack)
