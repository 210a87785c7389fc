"""Legacy ASCII VTK output: one STRUCTURED_POINTS file per block plus a
manifest listing every file of the output step."""
from __future__ import annotations

import os

import numpy as np

from ..errors import ValidationError
from .ghost import _field_of

_VTK_TYPES = {
    "float64": "double",
    "float32": "float",
    "int64": "long",
    "int32": "int",
    "uint32": "unsigned_int",
    "uint8": "unsigned_char",
}


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".12g")


def _block_file_name(basename, step, bid) -> str:
    path = "".join(str(o) for o in bid.path) if bid.path else "r"
    return f"{basename}_s{step:06d}_b{bid.root}_{path}.vtk"


def write_block_vtk(forest, block, path, fields) -> None:
    """`fields` is a list of (name, slot key); nf = 1 writes scalars, nf = 3
    vectors, anything else one scalar array per component."""
    n = forest.cells_per_block
    aabb = forest.block_aabb(block.id)
    dx = forest.dx(block.level)
    lines = [
        "# vtk DataFile Version 3.0",
        f"block {block.id.root} level {block.level}",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {n[0] + 1} {n[1] + 1} {n[2] + 1}",
        f"ORIGIN {_fmt(aabb[0])} {_fmt(aabb[1])} {_fmt(aabb[2])}",
        f"SPACING {_fmt(dx[0])} {_fmt(dx[1])} {_fmt(dx[2])}",
        f"CELL_DATA {n[0] * n[1] * n[2]}",
    ]
    for name, key in fields:
        field = _field_of(block.data[key])
        data = field.interior
        vtk_type = _VTK_TYPES.get(str(data.dtype))
        if vtk_type is None:
            raise ValidationError(f"no VTK mapping for dtype {data.dtype}")
        if field.nf == 3:
            lines.append(f"VECTORS {name} {vtk_type}")
            for row in data.reshape(-1, 3):
                lines.append(f"{_fmt(row[0])} {_fmt(row[1])} {_fmt(row[2])}")
        else:
            for comp in range(field.nf):
                label = name if field.nf == 1 else f"{name}_{comp}"
                lines.append(f"SCALARS {label} {vtk_type} 1")
                lines.append("LOOKUP_TABLE default")
                for value in data[..., comp].ravel():
                    lines.append(_fmt(value))
    with open(path, "w", encoding="ascii") as handle:
        handle.write("\n".join(lines) + "\n")


def write_vtk(forest, directory, basename, step, fields) -> list:
    """Collective: write every local block and, on rank 0, the manifest.

    Returns this rank's file names (relative to `directory`).
    """
    os.makedirs(directory, exist_ok=True)
    names = []
    for block in forest.local_blocks():
        name = _block_file_name(basename, step, block.id)
        write_block_vtk(forest, block, os.path.join(directory, name), fields)
        names.append(name)
    gathered = forest.ctx.all_gather(names)
    if forest.ctx.rank == 0:
        manifest = os.path.join(directory, f"{basename}_s{step:06d}.manifest.txt")
        every = sorted(n for rank in gathered for n in gathered[rank])
        with open(manifest, "w", encoding="ascii") as handle:
            handle.write("\n".join(every) + "\n")
    return names
