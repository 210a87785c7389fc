"""Voxel mapping of rigid bodies onto the lattice.

Every cell whose center lies strictly inside a body is claimed for that
body; where bodies overlap the lower uid wins. Coverage is computed ghost
inclusive from the synchronized body population (local bodies plus the
pre-shifted ghost images), so a block sees exactly the same covered cells in
its ghost ring that the neighboring block sees in its interior, independent
of the block-to-rank assignment.

From the coverage each block derives its boundary links: for every interior
fluid cell and lattice direction whose neighbor cell is covered, one link
(uid, direction, cell). The links drive the momentum-exchange wall rule and
the per-body force readout; enumerating them over interior cells only makes
every link globally unique.
"""
from __future__ import annotations

import logging

import math

import numpy as np

from ..errors import ValidationError
from ..rpd.storage import _handler

log = logging.getLogger("blocksim.coupling")

# a body covering a ghost-ring cell sits at most half a cell diagonal
# outside the block, so its ghost image only exists there when the sync
# reach (radius + threshold) extends that far
_MIN_THRESHOLD = math.sqrt(3.0) / 2.0


class ParticleMapping:
    """Body coverage of one forest snapshot.

    owner[block_id]: (nz+2, ny+2, nx+2) int64, covering body uid per cell
    (ghost inclusive), -1 where free. links[block_id]: list of link groups
    (uid, direction, zs, ys, xs) in ghost-inclusive interior coordinates,
    sorted by (uid, direction).
    """

    def __init__(self, stencil):
        self.stencil = stencil
        self.owner = {}
        self.links = {}

    def covered_interior(self, block_id):
        """Interior view of the owner array (no ghost ring)."""
        return self.owner[block_id][1:-1, 1:-1, 1:-1]

    def link_count(self, block_id) -> int:
        return sum(len(zs) for _, _, zs, _, _ in self.links[block_id])


def _claimable_mask(block, handling):
    """Ghost-inclusive bool mask of cells a body may claim.

    Only cells that are plain fluid in the static boundary layout take part
    in the coupling; wall cells keep their static role even when a body
    volume overlaps them.
    """
    if handling is None:
        return None
    flag_field = block.data[handling.flags_key]
    if flag_field.g != 1:
        raise ValidationError("body mapping needs exactly one ghost layer")
    return (flag_field.view & handling.fluid_mask(block)) != 0


def map_bodies(forest, stencil, *, handling=None, key="bodies"):
    """Build the coverage and boundary links for the current body positions.

    Bodies must be synchronized (ghost images present wherever body volumes
    reach); finite bodies only, claimed in ascending uid order so overlap
    cells go to the lower uid. Returns a ParticleMapping.
    """
    if forest.d != 3:
        raise ValidationError("resolved particle coupling needs a 3D forest")
    if stencil.d != 3:
        raise ValidationError(f"{stencil.name} does not match a 3D forest")
    if forest.cells_per_block is None:
        raise ValidationError("forest has no cells_per_block")
    dx_max = max((max(forest.dx(blk.level)) for blk in forest.local_blocks()),
                 default=1.0)
    if _handler(forest, key).contact_threshold < _MIN_THRESHOLD * dx_max:
        raise ValidationError(
            "coverage in the ghost ring needs body ghosts on every block a "
            "body's cells can touch: register bodies with contact_threshold "
            f">= sqrt(3)/2 cells ({_MIN_THRESHOLD * dx_max:.4f})")
    if handling is not None and handling._links is None:
        handling.freeze()

    mapping = ParticleMapping(stencil)
    ncx, ncy, ncz = forest.cells_per_block
    overlap_cells = 0
    for block in forest.local_blocks():
        storage = block.data[key]
        (cx0, cy0, cz0), (dx, dy, dz) = forest.cell_centers(block.id)
        xs = cx0 + dx * (np.arange(ncx + 2) - 1)
        ys = cy0 + dy * (np.arange(ncy + 2) - 1)
        zs = cz0 + dz * (np.arange(ncz + 2) - 1)
        ow = np.full((ncz + 2, ncy + 2, ncx + 2), -1, dtype=np.int64)
        claimable = _claimable_mask(block, handling)

        for uid in sorted(storage.bodies):
            body = storage.bodies[uid]
            if not body.is_finite:
                continue
            r = body.shape.bounding_radius
            p = body.position
            ix0, ix1 = np.searchsorted(xs, (p[0] - r, p[0] + r))
            iy0, iy1 = np.searchsorted(ys, (p[1] - r, p[1] + r))
            iz0, iz1 = np.searchsorted(zs, (p[2] - r, p[2] + r))
            if ix0 == ix1 or iy0 == iy1 or iz0 == iz1:
                continue
            d2 = ((xs[ix0:ix1][None, None, :] - p[0]) ** 2
                  + (ys[iy0:iy1][None, :, None] - p[1]) ** 2
                  + (zs[iz0:iz1][:, None, None] - p[2]) ** 2)
            inside = d2 < r * r
            win = ow[iz0:iz1, iy0:iy1, ix0:ix1]
            overlap_cells += int(np.count_nonzero(inside & (win >= 0)))
            claim = inside & (win == -1)
            if claimable is not None:
                claim &= claimable[iz0:iz1, iy0:iy1, ix0:ix1]
            win[claim] = uid

        mapping.owner[block.id] = ow
        if claimable is None:
            fluid = ow[1:-1, 1:-1, 1:-1] == -1
        else:
            fluid = claimable[1:-1, 1:-1, 1:-1] & (ow[1:-1, 1:-1, 1:-1] == -1)
        groups = []
        for i in range(1, stencil.q):
            ci = (int(stencil.cz[i]), int(stencil.cy[i]), int(stencil.cx[i]))
            nb = ow[1 + ci[0]:1 + ci[0] + ncz,
                    1 + ci[1]:1 + ci[1] + ncy,
                    1 + ci[2]:1 + ci[2] + ncx]
            hit = fluid & (nb >= 0)
            if not hit.any():
                continue
            hz, hy, hx = np.nonzero(hit)
            uids = nb[hz, hy, hx]
            for uid in np.unique(uids):
                m = uids == uid
                groups.append((int(uid), i, hz[m] + 1, hy[m] + 1, hx[m] + 1))
        groups.sort(key=lambda t: (t[0], t[1]))
        mapping.links[block.id] = groups

    if overlap_cells:
        log.debug("body overlap: %d cells claimed by the lower uid",
                  overlap_cells)
    return mapping


def covered_cell_counts(forest, mapping) -> dict:
    """Collective: global number of covered interior cells per body uid."""
    local = {}
    for block in forest.local_blocks():
        inner = mapping.covered_interior(block.id)
        uids, counts = np.unique(inner[inner >= 0], return_counts=True)
        for uid, n in zip(uids, counts):
            local[int(uid)] = local.get(int(uid), 0) + int(n)
    gathered = forest.ctx.all_gather(local)
    total = {}
    for rank in sorted(gathered):
        for uid, n in gathered[rank].items():
            total[uid] = total.get(uid, 0) + n
    return total
