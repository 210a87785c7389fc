"""Collect an axis-aligned sub-box of a field on rank 0."""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from .ghost import _field_of


def gather_slice(forest, key, lo, hi, level=0):
    """Dense (z, y, x, f) array of the global cell box [lo, hi) at `level`.

    Lines and planes are degenerate boxes. Returns the array on rank 0 and
    None elsewhere. Blocks at other levels must not intersect the box.
    """
    ctx = forest.ctx
    lo = tuple(int(v) for v in lo)
    hi = tuple(int(v) for v in hi)
    ext = forest.global_cells(level)
    for a in range(3):
        if not (0 <= lo[a] < hi[a] <= ext[a]):
            raise ValidationError(
                f"slice box {lo}..{hi} outside the level-{level} grid {ext}")
    contributions = []
    violations = []
    for block in forest.local_blocks():
        n = forest.cells_per_block
        c = forest.block_coords(block.id)
        blo = [c[a] * n[a] for a in range(3)]
        bhi = [blo[a] + n[a] for a in range(3)]
        if block.level != level:
            # compare at the finer of the two levels
            shift = abs(block.level - level)
            f = [1 << shift, 1 << shift, (1 << shift) if forest.d == 3 else 1]
            if block.level < level:
                tlo = [blo[a] * f[a] for a in range(3)]
                thi = [bhi[a] * f[a] for a in range(3)]
                qlo, qhi = lo, hi
            else:
                tlo, thi = blo, bhi
                qlo = [lo[a] * f[a] for a in range(3)]
                qhi = [hi[a] * f[a] for a in range(3)]
            if all(max(tlo[a], qlo[a]) < min(thi[a], qhi[a]) for a in range(3)):
                violations.append((block.id.root, block.level))
            continue
        olo = tuple(max(blo[a], lo[a]) for a in range(3))
        ohi = tuple(min(bhi[a], hi[a]) for a in range(3))
        if any(olo[a] >= ohi[a] for a in range(3)):
            continue
        view = _field_of(block.data[key]).interior
        sub = view[olo[2] - blo[2]:ohi[2] - blo[2],
                   olo[1] - blo[1]:ohi[1] - blo[1],
                   olo[0] - blo[0]:ohi[0] - blo[0]]
        contributions.append((olo, np.ascontiguousarray(sub)))
    # validation travels with the data so every rank raises consistently
    gathered = ctx.all_gather((violations, contributions))
    bad = [v for rank in gathered for v in gathered[rank][0]]
    if bad:
        raise ValidationError(
            f"blocks at other levels intersect the level-{level} slice: {bad}")
    nf = None
    for rank in sorted(gathered):
        for _, arr in gathered[rank][1]:
            nf = arr.shape[3]
            dtype = arr.dtype
            break
        if nf is not None:
            break
    if nf is None:
        raise ValidationError("slice box covers no stored blocks")
    if ctx.rank != 0:
        return None
    out = np.zeros((hi[2] - lo[2], hi[1] - lo[1], hi[0] - lo[0], nf), dtype=dtype)
    for rank in sorted(gathered):
        for olo, arr in gathered[rank][1]:
            out[olo[2] - lo[2]:olo[2] - lo[2] + arr.shape[0],
                olo[1] - lo[1]:olo[1] - lo[1] + arr.shape[1],
                olo[0] - lo[0]:olo[0] - lo[0] + arr.shape[2]] = arr
    return out
