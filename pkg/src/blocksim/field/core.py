"""Ghost-layered structured fields.

A Field stores (nx, ny, nz, nf) values plus g ghost layers on every spatial
side, in one of two memory layouts: "zyxf" keeps the nf values of a cell
together (array of structures), "fzyx" keeps each component contiguous over
the grid (structure of arrays). All indexing helpers expose the same logical
(z, y, x, f) view regardless of layout, so numeric code is layout-agnostic
while traversal utilities can still walk memory linearly.
"""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError

LAYOUTS = ("zyxf", "fzyx")


class Field:
    __slots__ = ("nx", "ny", "nz", "nf", "g", "layout", "dx", "raw")

    def __init__(self, dims, ghost_layers=0, layout="zyxf", init=0.0,
                 dtype=np.float64, dx=1.0):
        nx, ny, nz, nf = (int(v) for v in dims)
        if min(nx, ny, nz, nf) < 1:
            raise ValidationError(f"field dims must be positive, got {dims}")
        if ghost_layers < 0:
            raise ValidationError(f"ghost layers must be >= 0, got {ghost_layers}")
        if layout not in LAYOUTS:
            raise ValidationError(f"layout must be one of {LAYOUTS}, got {layout!r}")
        self.nx, self.ny, self.nz, self.nf = nx, ny, nz, nf
        self.g = int(ghost_layers)
        self.layout = layout
        self.dx = float(dx)
        g2 = 2 * self.g
        if layout == "zyxf":
            shape = (nz + g2, ny + g2, nx + g2, nf)
        else:
            shape = (nf, nz + g2, ny + g2, nx + g2)
        self.raw = np.full(shape, init, dtype=dtype)

    @property
    def dims(self):
        return (self.nx, self.ny, self.nz, self.nf)

    @property
    def view(self):
        """Logical (z, y, x, f) array including ghost layers."""
        if self.layout == "zyxf":
            return self.raw
        return np.moveaxis(self.raw, 0, 3)

    @property
    def interior(self):
        """Logical view restricted to the non-ghost cells."""
        g = self.g
        v = self.view
        return v[g:g + self.nz, g:g + self.ny, g:g + self.nx]

    def get(self, x, y, z, f=0):
        """Value at interior coordinates; negatives/overflow reach ghosts."""
        self._check_index(x, y, z, f)
        g = self.g
        return self.view[z + g, y + g, x + g, f]

    def set(self, x, y, z, f, value):
        self._check_index(x, y, z, f)
        g = self.g
        self.view[z + g, y + g, x + g, f] = value

    def _check_index(self, x, y, z, f):
        g = self.g
        if not (-g <= x < self.nx + g and -g <= y < self.ny + g
                and -g <= z < self.nz + g and 0 <= f < self.nf):
            raise IndexError(f"({x}, {y}, {z}, {f}) outside field of dims "
                             f"{self.dims} with {g} ghost layers")

    def swap_data(self, other: "Field") -> None:
        """Exchange storage with `other` in O(1); shapes must match."""
        if (self.dims != other.dims or self.g != other.g
                or self.layout != other.layout or self.raw.dtype != other.raw.dtype):
            raise ValidationError(
                f"cannot swap fields {self.dims}/g={self.g}/{self.layout} and "
                f"{other.dims}/g={other.g}/{other.layout}")
        self.raw, other.raw = other.raw, self.raw

    def linear_iter(self):
        """Yield (x, y, z, f) for all cells in ascending memory order."""
        g2 = 2 * self.g
        if self.layout == "zyxf":
            for z in range(self.nz + g2):
                for y in range(self.ny + g2):
                    for x in range(self.nx + g2):
                        for f in range(self.nf):
                            yield (x - self.g, y - self.g, z - self.g, f)
        else:
            for f in range(self.nf):
                for z in range(self.nz + g2):
                    for y in range(self.ny + g2):
                        for x in range(self.nx + g2):
                            yield (x - self.g, y - self.g, z - self.g, f)

    def copy(self) -> "Field":
        out = Field(self.dims, self.g, self.layout, 0.0, self.raw.dtype, self.dx)
        out.raw[...] = self.raw
        return out

    def __repr__(self):
        return (f"Field(dims={self.dims}, g={self.g}, layout={self.layout!r}, "
                f"dtype={self.raw.dtype})")


def make_field(dims, ghost_layers, layout, init=0.0, dtype=np.float64, dx=1.0) -> Field:
    return Field(dims, ghost_layers, layout, init, dtype, dx)


def swap_data(a: Field, b: Field) -> None:
    a.swap_data(b)


class FlagField:
    """Per-cell bitmask field with a name -> bit registry.

    The registry may be shared between FlagFields (one registry per forest
    data slot) so a flag name means the same bit on every block.
    """

    def __init__(self, dims3, ghost_layers=0, registry=None):
        self.field = Field(tuple(dims3) + (1,), ghost_layers, "zyxf",
                           init=0, dtype=np.uint32)
        self.registry = {} if registry is None else registry

    @property
    def view(self):
        """(z, y, x) bitmask view including ghosts."""
        return self.field.view[..., 0]

    @property
    def interior(self):
        return self.field.interior[..., 0]

    @property
    def g(self):
        return self.field.g

    def register(self, name: str) -> int:
        if name in self.registry:
            raise ValidationError(f"flag {name!r} already registered")
        if len(self.registry) >= 32:
            raise ValidationError("flag registry full (32 bits)")
        mask = np.uint32(1 << len(self.registry))
        self.registry[name] = mask
        return mask

    def mask(self, name: str) -> int:
        try:
            return self.registry[name]
        except KeyError:
            raise ValidationError(f"flag {name!r} is not registered") from None

    def combined_mask(self, names) -> int:
        out = np.uint32(0)
        for name in names:
            out |= self.mask(name)
        return out

    def count(self, name: str) -> int:
        """Interior cells carrying the named flag."""
        return int(np.count_nonzero(self.interior & self.mask(name)))


def sweep(forest, kernel) -> None:
    """Apply `kernel(block)` to every local block in ascending id order."""
    for block in forest.local_blocks():
        kernel(block)
