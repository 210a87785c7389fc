"""Forest data handlers that place a field on every block.

Refinement hands each child the piecewise-constant expansion of its quadrant
of the parent; coarsening averages 2^d child cells into one (bitwise OR for
integer mask fields). Ghost layers are not transferred: the next exchange
refreshes them.
"""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from .core import Field, FlagField
from .ghost import _average, _expand, _require_even


def _factors(d):
    return (2, 2, 2 if d == 3 else 1)


def _child_slices(forest, octant, halved=False):
    """Interior (z, y, x) slices of a child's quadrant within its parent."""
    n = forest.cells_per_block
    f = _factors(forest.d)
    off = (octant & 1, (octant >> 1) & 1, (octant >> 2) & 1)
    sl = []
    for a in (2, 1, 0):
        if f[a] == 1:
            sl.append(slice(0, n[a]))
        else:
            h = n[a] // 2
            sl.append(slice(off[a] * h, (off[a] + 1) * h))
    return tuple(sl)


class FieldDataHandler:
    def __init__(self, nf=1, ghost_layers=1, layout="zyxf", init=0.0,
                 dtype=np.float64):
        self.nf = int(nf)
        self.g = int(ghost_layers)
        self.layout = layout
        self.init = init
        self.dtype = dtype

    def _dims(self, forest):
        if forest.cells_per_block is None:
            raise ValidationError("forest has no cells_per_block")
        return tuple(forest.cells_per_block) + (self.nf,)

    def create(self, forest, block) -> Field:
        dx = forest.dx(block.level)[0]
        return Field(self._dims(forest), self.g, self.layout, self.init,
                     self.dtype, dx)

    def serialize(self, forest, block, field, buf) -> None:
        buf.pack_array(field.raw)

    def deserialize(self, forest, block, buf) -> Field:
        field = self.create(forest, block)
        raw = buf.unpack_array()
        if raw.shape != field.raw.shape:
            raise ValidationError(
                f"serialized field shape {raw.shape} != expected {field.raw.shape}")
        field.raw[...] = raw
        return field

    def on_refine(self, forest, parent, field, child) -> Field:
        _require_even(forest)
        out = self.create(forest, child)
        quadrant = field.interior[_child_slices(forest, child.id.path[-1])]
        out.interior[...] = _expand(quadrant, _factors(forest.d))
        return out

    def on_coarsen(self, forest, parent, child_fields) -> Field:
        _require_even(forest)
        out = self.create(forest, parent)
        for octant, child_field in enumerate(child_fields):
            out.interior[_child_slices(forest, octant)] = \
                _average(child_field.interior, _factors(forest.d))
        return out


class FlagFieldHandler:
    """FlagFields sharing one name -> bit registry across all blocks."""

    def __init__(self, ghost_layers=1):
        self.g = int(ghost_layers)
        self.registry = {}

    def register(self, name: str) -> int:
        if name in self.registry:
            raise ValidationError(f"flag {name!r} already registered")
        if len(self.registry) >= 32:
            raise ValidationError("flag registry full (32 bits)")
        mask = np.uint32(1 << len(self.registry))
        self.registry[name] = mask
        return mask

    def create(self, forest, block) -> FlagField:
        if forest.cells_per_block is None:
            raise ValidationError("forest has no cells_per_block")
        return FlagField(forest.cells_per_block, self.g, self.registry)

    def serialize(self, forest, block, flags, buf) -> None:
        buf.pack_array(flags.field.raw)

    def deserialize(self, forest, block, buf) -> FlagField:
        flags = self.create(forest, block)
        raw = buf.unpack_array()
        if raw.shape != flags.field.raw.shape:
            raise ValidationError(
                f"serialized flag shape {raw.shape} != expected {flags.field.raw.shape}")
        flags.field.raw[...] = raw
        return flags

    def on_refine(self, forest, parent, flags, child) -> FlagField:
        _require_even(forest)
        out = self.create(forest, child)
        quadrant = flags.field.interior[_child_slices(forest, child.id.path[-1])]
        out.field.interior[...] = _expand(quadrant, _factors(forest.d))
        return out

    def on_coarsen(self, forest, parent, child_flags) -> FlagField:
        _require_even(forest)
        out = self.create(forest, parent)
        for octant, child in enumerate(child_flags):
            out.field.interior[_child_slices(forest, octant)] = \
                _average(child.field.interior, _factors(forest.d))
        return out
