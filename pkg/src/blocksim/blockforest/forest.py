"""Distributed forest of octrees.

The domain is split into a grid of root cells; each kept root is the root of
an octree (quadtree in 2D) whose leaves are the blocks. A rank stores only
its local blocks plus neighbor records of adjacent blocks, never a global
block list; collective operations that need global topology (creation,
neighborhood rebuilds after adaptation, recovery) gather it transiently and
discard it.

Block coordinates are integers at the block's level: root cell (Rx,Ry,Rz)
spans coordinates [R * 2^level, (R+1) * 2^level). All adjacency geometry is
exact integer arithmetic; physical AABBs are derived on demand.

Invariant maintained by every topology operation: adjacent leaves differ by
at most one level across faces, edges, and corners (2:1 balance).
"""
from __future__ import annotations

import struct
from typing import NamedTuple

from ..errors import TopologyError, ValidationError
from ..runtime.buffers import RecvBuffer, SendBuffer
from .. import balance as _balance
from .blockid import BlockId

SNAPSHOT_MAGIC = b"WBCP"
SNAPSHOT_VERSION = 1


def directions(d: int):
    """All face/edge/corner offsets: 26 in 3D, 8 in 2D. Deterministic order."""
    out = []
    zr = (-1, 0, 1) if d == 3 else (0,)
    for dz in zr:
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dx == 0 and dy == 0 and dz == 0:
                    continue
                out.append((dx, dy, dz))
    return tuple(out)


class NeighborRecord(NamedTuple):
    direction: tuple      # offset from this block toward the neighbor
    block_id: BlockId
    rank: int
    level: int
    shift: tuple          # whole-domain wraps applied to see the neighbor


class Block:
    """A leaf of the forest: id, geometry and named data slots."""

    __slots__ = ("id", "data", "neighbors")

    def __init__(self, block_id: BlockId):
        self.id = block_id
        self.data = {}
        self.neighbors = ()

    @property
    def level(self) -> int:
        return self.id.level

    def __repr__(self):
        return f"Block({self.id!r})"


class BlockForest:
    """Per-rank view of the forest: local blocks, neighbor records, handlers."""

    def __init__(self, ctx, domain, root_dims, *, d: int = 3,
                 periodic=(False, False, False), kept_roots=None,
                 cells_per_block=None, max_level: int = 12):
        if d not in (2, 3):
            raise ValidationError(f"dimension must be 2 or 3, got {d}")
        root_dims = tuple(int(r) for r in root_dims)
        if d == 2 and root_dims[2] != 1:
            raise ValidationError("2D forests need root_dims[2] == 1")
        if any(r < 1 for r in root_dims):
            raise ValidationError(f"root_dims must be positive, got {root_dims}")
        domain = tuple(float(v) for v in domain)
        if len(domain) != 6 or any(domain[i] >= domain[3 + i] for i in range(3)):
            raise ValidationError(f"bad domain AABB {domain}")
        self.ctx = ctx
        self.domain = domain
        self.root_dims = root_dims
        self.d = d
        self.periodic = tuple(bool(p) for p in periodic[:3])
        if d == 2 and self.periodic[2]:
            raise ValidationError("2D forests cannot be periodic in z")
        n_roots = root_dims[0] * root_dims[1] * root_dims[2]
        self.kept_roots = frozenset(range(n_roots)) if kept_roots is None else frozenset(kept_roots)
        if cells_per_block is not None:
            cells_per_block = tuple(int(c) for c in cells_per_block)
            if any(c < 1 for c in cells_per_block):
                raise ValidationError(f"cells_per_block must be positive, got {cells_per_block}")
            if d == 2 and cells_per_block[2] != 1:
                raise ValidationError("2D forests need cells_per_block[2] == 1")
        self.cells_per_block = cells_per_block
        self.max_level = int(max_level)
        self.blocks = {}
        self.handlers = {}
        self._dirs = directions(d)

    # -------------------------------------------------------------- basics

    @property
    def n_children(self) -> int:
        return 1 << self.d

    def local_blocks(self) -> list:
        """Local blocks in ascending id order (the sweep order)."""
        return [self.blocks[k] for k in sorted(self.blocks)]

    def storage_record_count(self) -> int:
        """Stored block records plus neighbor records (memory invariant)."""
        return len(self.blocks) + sum(len(b.neighbors) for b in self.blocks.values())

    def register_data(self, key: str, handler) -> str:
        """Attach a data handler; creates the slot on every existing block."""
        if key in self.handlers:
            raise ValidationError(f"data slot {key!r} already registered")
        self.handlers[key] = handler
        for block in self.local_blocks():
            block.data[key] = handler.create(self, block)
        return key

    # ------------------------------------------------------------- geometry

    def root_coords(self, root: int):
        rx, ry, rz = self.root_dims
        return (root % rx, (root // rx) % ry, root // (rx * ry))

    def root_index(self, coords) -> int:
        rx, ry, rz = self.root_dims
        x, y, z = coords
        return (z * ry + y) * rx + x

    def level_extent(self, level: int):
        """Domain extent in block coordinates at `level` (z stays 1 in 2D)."""
        rx, ry, rz = self.root_dims
        s = 1 << level
        return (rx * s, ry * s, (rz * s) if self.d == 3 else rz)

    def block_coords(self, bid: BlockId):
        x, y, z = self.root_coords(bid.root)
        for octant in bid.path:
            x = (x << 1) | (octant & 1)
            y = (y << 1) | ((octant >> 1) & 1)
            if self.d == 3:
                z = (z << 1) | ((octant >> 2) & 1)
        return (x, y, z)

    def coords_to_id(self, coords, level: int) -> BlockId:
        x, y, z = (int(c) for c in coords)
        rx = x >> level
        ry = y >> level
        rz = (z >> level) if self.d == 3 else z
        R = self.root_dims
        if not (0 <= rx < R[0] and 0 <= ry < R[1] and 0 <= rz < R[2]):
            raise TopologyError(f"coords {coords} outside root grid at level {level}")
        path = []
        for k in range(level - 1, -1, -1):
            octant = ((x >> k) & 1) | (((y >> k) & 1) << 1)
            if self.d == 3:
                octant |= ((z >> k) & 1) << 2
            path.append(octant)
        return BlockId(self.root_index((rx, ry, rz)), tuple(path))

    def block_aabb(self, bid: BlockId):
        x, y, z = self.block_coords(bid)
        ex, ey, ez = self.level_extent(bid.level)
        x0, y0, z0, x1, y1, z1 = self.domain
        sx = (x1 - x0) / ex
        sy = (y1 - y0) / ey
        sz = (z1 - z0) / ez
        return (
            x0 + x * sx, y0 + y * sy, z0 + z * sz,
            x0 + (x + 1) * sx, y0 + (y + 1) * sy, z0 + (z + 1) * sz,
        )

    def dx(self, level: int):
        """Physical cell size at `level` (needs cells_per_block)."""
        if self.cells_per_block is None:
            raise ValidationError("forest has no cells_per_block")
        ex, ey, ez = self.level_extent(level)
        cb = self.cells_per_block
        x0, y0, z0, x1, y1, z1 = self.domain
        return (
            (x1 - x0) / (ex * cb[0]),
            (y1 - y0) / (ey * cb[1]),
            (z1 - z0) / (ez * cb[2]),
        )

    def cell_box(self, bid: BlockId):
        """Global cell index range [(lo), (hi)) of a block at its own level."""
        if self.cells_per_block is None:
            raise ValidationError("forest has no cells_per_block")
        bx, by, bz = self.block_coords(bid)
        cb = self.cells_per_block
        lo = (bx * cb[0], by * cb[1], bz * cb[2])
        hi = (lo[0] + cb[0], lo[1] + cb[1], lo[2] + cb[2])
        return lo, hi

    def global_cells(self, level: int):
        """Total cell grid dimensions at `level`."""
        if self.cells_per_block is None:
            raise ValidationError("forest has no cells_per_block")
        ex, ey, ez = self.level_extent(level)
        cb = self.cells_per_block
        return (ex * cb[0], ey * cb[1], ez * cb[2])

    def cell_centers(self, bid: BlockId):
        """Physical center of cell (0,0,0) and spacings, for coordinate math."""
        aabb = self.block_aabb(bid)
        dx = self.dx(bid.level)
        return (
            (aabb[0] + 0.5 * dx[0], aabb[1] + 0.5 * dx[1], aabb[2] + 0.5 * dx[2]),
            dx,
        )

    # ------------------------------------------------------------ neighbors

    def find_neighbors(self, owner_map: dict, bid: BlockId) -> tuple:
        """Neighbor records of `bid` given a global {id: rank} map."""
        level = bid.level
        coords = self.block_coords(bid)
        ext = self.level_extent(level)
        records = []
        for direction in self._dirs:
            cand = [coords[a] + direction[a] for a in range(3)]
            shift = [0, 0, 0]
            outside = False
            for a in range(3):
                if cand[a] < 0:
                    if self.periodic[a]:
                        cand[a] += ext[a]
                        shift[a] = -1
                    else:
                        outside = True
                elif cand[a] >= ext[a]:
                    if self.periodic[a]:
                        cand[a] -= ext[a]
                        shift[a] = 1
                    else:
                        outside = True
            if outside:
                continue
            root = self.root_index(tuple(c >> level for c in cand[:2]) + (
                (cand[2] >> level) if self.d == 3 else cand[2],))
            if root not in self.kept_roots:
                continue
            found = self._lookup_leaf(owner_map, tuple(cand), level, direction)
            for nb_id, nb_rank in found:
                records.append(NeighborRecord(
                    direction, nb_id, nb_rank, nb_id.level, tuple(shift)))
        records.sort(key=lambda r: (r.direction, r.block_id, r.shift))
        return tuple(records)

    def _lookup_leaf(self, owner_map, cand, level, direction):
        # same level
        bid = self.coords_to_id(cand, level)
        if bid in owner_map:
            return [(bid, owner_map[bid])]
        # one coarser
        if level > 0:
            up = tuple(c >> 1 for c in cand[:2]) + (
                (cand[2] >> 1) if self.d == 3 else cand[2],)
            pid = self.coords_to_id(up, level - 1)
            if pid in owner_map:
                return [(pid, owner_map[pid])]
        # one finer: the touching children of the candidate cell
        found = []
        offsets = []
        for a in range(3):
            if a == 2 and self.d == 2:
                offsets.append((0,))
            elif direction[a] > 0:
                offsets.append((0,))
            elif direction[a] < 0:
                offsets.append((1,))
            else:
                offsets.append((0, 1))
        for oz in offsets[2]:
            for oy in offsets[1]:
                for ox in offsets[0]:
                    cc = (2 * cand[0] + ox, 2 * cand[1] + oy,
                          (2 * cand[2] + oz) if self.d == 3 else cand[2])
                    cid = self.coords_to_id(cc, level + 1)
                    if cid in owner_map:
                        found.append((cid, owner_map[cid]))
        if not found:
            raise TopologyError(
                f"no leaf covers coords {cand} at level {level}±1 "
                f"(forest inconsistent or 2:1 violated)"
            )
        return found

    def gather_owner_map(self) -> dict:
        """Transient global {id: rank}; only valid inside a collective."""
        mine = [(b.id.root, b.id.level, b.id.path_bits(self.d)) for b in self.local_blocks()]
        gathered = self.ctx.all_gather(mine)
        owner_map = {}
        for rank in sorted(gathered):
            for root, level, bits in gathered[rank]:
                owner_map[BlockId.from_path_bits(root, level, bits, self.d)] = rank
        return owner_map

    def rebuild_neighborhoods(self, owner_map=None) -> None:
        """Collective: refresh every local block's neighbor records."""
        if owner_map is None:
            owner_map = self.gather_owner_map()
        for block in self.blocks.values():
            block.neighbors = self.find_neighbors(owner_map, block.id)

    def neighbor_ranks(self) -> list:
        """Ranks owning blocks adjacent to mine (sorted, without self)."""
        out = set()
        for block in self.blocks.values():
            for rec in block.neighbors:
                if rec.rank != self.ctx.rank:
                    out.add(rec.rank)
        return sorted(out)

    # ------------------------------------------------------------- snapshot

    def serialize_block_data(self, block: Block) -> list:
        """[(key, bytes)] for all slots, keys sorted (deterministic image)."""
        out = []
        for key in sorted(block.data):
            buf = SendBuffer(debug=False)
            self.handlers[key].serialize(self, block, block.data[key], buf)
            out.append((key, buf.getvalue()))
        return out

    def deserialize_block_data(self, block: Block, slots) -> None:
        for key, blob in slots:
            handler = self.handlers.get(key)
            if handler is None:
                raise ValidationError(f"no handler registered for data slot {key!r}")
            block.data[key] = handler.deserialize(self, block, RecvBuffer(blob, debug=False))

    def snapshot(self) -> bytes:
        """Self-describing image of this rank's blocks and their data."""
        out = bytearray()
        out += SNAPSHOT_MAGIC
        out += struct.pack("<BB", SNAPSHOT_VERSION, self.d)
        out += struct.pack("<III", *self.root_dims)
        blocks = self.local_blocks()
        out += struct.pack("<I", len(blocks))
        for block in blocks:
            out += struct.pack("<IBQ", block.id.root, block.id.level,
                               block.id.path_bits(self.d))
            slots = self.serialize_block_data(block)
            out += struct.pack("<B", len(slots))
            for key, blob in slots:
                kb = key.encode("utf-8")
                out += struct.pack("<H", len(kb))
                out += kb
                out += struct.pack("<I", len(blob))
                out += blob
        return bytes(out)

    def parse_snapshot(self, image: bytes) -> list:
        """Validate an image and return [(BlockId, [(key, bytes)])]."""
        if image[:4] != SNAPSHOT_MAGIC:
            raise ValidationError("corrupt snapshot: bad magic")
        pos = 4
        version, d = struct.unpack_from("<BB", image, pos); pos += 2
        if version != SNAPSHOT_VERSION:
            raise ValidationError(f"unsupported snapshot version {version}")
        if d != self.d:
            raise ValidationError(f"snapshot dimension {d} != forest dimension {self.d}")
        dims = struct.unpack_from("<III", image, pos); pos += 12
        if tuple(dims) != self.root_dims:
            raise ValidationError(
                f"snapshot root grid {tuple(dims)} != forest root grid {self.root_dims}")
        (n_blocks,) = struct.unpack_from("<I", image, pos); pos += 4
        out = []
        for _ in range(n_blocks):
            root, level, bits = struct.unpack_from("<IBQ", image, pos); pos += 13
            bid = BlockId.from_path_bits(root, level, bits, self.d)
            (n_slots,) = struct.unpack_from("<B", image, pos); pos += 1
            slots = []
            for _ in range(n_slots):
                (klen,) = struct.unpack_from("<H", image, pos); pos += 2
                key = image[pos : pos + klen].decode("utf-8"); pos += klen
                (blen,) = struct.unpack_from("<I", image, pos); pos += 4
                slots.append((key, image[pos : pos + blen])); pos += blen
            out.append((bid, slots))
        return out

    def load_snapshot_blocks(self, images, *, keep=None) -> None:
        """Replace local blocks with those parsed from `images`.

        `keep(block_id) -> bool` filters which parsed blocks this rank adopts
        (used for restarts with a different rank count). Neighborhoods are NOT
        rebuilt here; callers do that collectively afterwards.
        """
        self.blocks = {}
        for image in images:
            for bid, slots in self.parse_snapshot(image):
                if keep is not None and not keep(bid):
                    continue
                if bid in self.blocks:
                    raise ValidationError(f"duplicate block {bid} across images")
                block = Block(bid)
                self.blocks[bid] = block
                self.deserialize_block_data(block, slots)


def create_forest(ctx, domain, root_dims, *, d: int = 3,
                  periodic=(False, False, False), cells_per_block=None,
                  discard=None, max_level: int = 12, curve: str = "morton") -> BlockForest:
    """Collectively build the initial forest of root-level blocks.

    Every rank derives the same root layout from the arguments, so no
    communication is needed beyond the neighborhood build. Roots for which
    `discard(aabb) -> True` are dropped (holes in the domain). Initial
    ownership follows the curve partition with unit weights, which makes a
    later rebalance of the untouched forest a no-op.
    """
    probe = BlockForest(ctx, domain, root_dims, d=d, periodic=periodic,
                        cells_per_block=cells_per_block, max_level=max_level)
    n_roots = root_dims[0] * root_dims[1] * root_dims[2]
    kept = []
    for root in range(n_roots):
        bid = BlockId(root)
        if discard is not None and discard(probe.block_aabb(bid)):
            continue
        kept.append(root)
    if not kept:
        raise ValidationError("all root blocks were discarded")
    forest = BlockForest(ctx, domain, root_dims, d=d, periodic=periodic,
                         kept_roots=kept, cells_per_block=cells_per_block,
                         max_level=max_level)
    entries = [((forest.block_coords(BlockId(r))), 0, BlockId(r)) for r in kept]
    ordered = _balance.sort_blocks(entries, curve, d)
    assignment = _balance.partition_curve([1.0] * len(ordered), ctx.n_ranks)
    owner_map = {}
    for bid, rank in zip(ordered, assignment):
        owner_map[bid] = rank
    for bid, rank in owner_map.items():
        if rank == ctx.rank:
            forest.blocks[bid] = Block(bid)
    forest.rebuild_neighborhoods(owner_map)
    return forest
